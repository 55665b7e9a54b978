"""Report figures. Everything renders through the Agg backend straight to files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# strip the version stamp so repeated runs write identical PNGs
SAVE_KW = {"dpi": 120, "metadata": {"Software": None}, "bbox_inches": "tight"}


def _save(fig, path: Path) -> Path:
    fig.savefig(path, **SAVE_KW)
    plt.close(fig)
    return path


def plot_losses(history, path) -> Path:
    h = np.asarray(history, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    if h.size:
        for col, label in ((1, "D"), (2, "G/E"), (3, "recon")):
            ax.plot(h[:, 0], h[:, col], lw=0.8, label=label)
        ax.legend(frameon=False)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    return _save(fig, Path(path))


def plot_roc(curves: dict, path) -> Path:
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    for name, (fpr, tpr, _) in curves.items():
        ax.plot(fpr, tpr, lw=1.2, label=name)
    ax.plot([0, 1], [0, 1], color="0.6", lw=0.6, ls="--")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.01)
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.legend(frameon=False, loc="lower right")
    return _save(fig, Path(path))


def plot_score_hist(scores, kinds, held, path, title="") -> Path:
    scores = np.asarray(scores, dtype=np.float64)
    groups = {"held-out": np.asarray(held, bool)}
    for k in sorted(set(kinds)):
        groups[k] = np.array([kk == k for kk in kinds]) & ~groups["held-out"]
    # log bins keep gps-noise outliers from squashing everything else
    lo = max(scores[scores > 0].min(), 1e-6) if np.any(scores > 0) else 1e-6
    bins = np.geomspace(lo, max(scores.max(), lo * 10), 40)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for name, sel in groups.items():
        if sel.any():
            ax.hist(np.clip(scores[sel], lo, None), bins=bins, histtype="step", lw=1.0, label=name)
    ax.set_xscale("log")
    ax.set_xlabel("score")
    ax.set_ylabel("count")
    if title:
        ax.set_title(title)
    ax.legend(frameon=False)
    return _save(fig, Path(path))


def render_report(out, model, curves, scores, kinds, held) -> list[Path]:
    fig_dir = Path(out) / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    paths = [plot_losses(model.history, fig_dir / "loss_curves.png"),
             plot_roc(curves, fig_dir / "roc.png")]
    for name, s in scores.items():
        safe = name.replace("@", "_")
        paths.append(plot_score_hist(s, kinds, held, fig_dir / f"scores_{safe}.png", title=name))
    return paths


def plot_samples(samples, path, ncols=8) -> Path:
    """Grid of generated samples: images when square, channel traces otherwise."""
    samples = np.asarray(samples, dtype=np.float64)
    n = samples.shape[0]
    nrows = int(np.ceil(n / ncols))
    fig, axes = plt.subplots(nrows, ncols, figsize=(ncols * 1.2, nrows * 1.2), squeeze=False)
    for ax in axes.flat:
        ax.set_axis_off()
    for i in range(n):
        ax = axes.flat[i]
        s = samples[i]
        side = int(round(np.sqrt(s.size)))
        if s.ndim == 1 and side * side == s.size:
            ax.imshow(s.reshape(side, side), cmap="gray")
        else:
            s = s.reshape(s.shape[0], -1) if s.ndim > 1 else s[None]
            ax.plot(s[0], s[1] if s.shape[0] > 1 else np.arange(s.shape[1]), lw=0.8)
    return _save(fig, Path(path))
