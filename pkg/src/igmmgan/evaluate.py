"""Experiment orchestration: held-out-class runs, ROC-AUC and persistence."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import platform
from importlib import resources
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from . import data as dmod
from .bigan import BiGANConfig, BiGANModel, check_untainted, taint, train_bigan, write_history_csv
from .igmm import BEST_TRAJECTORY, IGMMResult, NIWPrior, run_igmm, tune_grid
from .scoring import METHOD_EGBAD, METHOD_MAHALANOBIS, MultimodalModel, ScoreRecord, score_dataset
from .weights import ChecksumError, FormatError, VersionError, sha256

log = logging.getLogger(__name__)

TIMING_KEYS = ("mean_score_seconds", "speedup", "seconds")


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


# ---------------------------------------------------------------------------
# ROC


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(score(anomaly) > score(normal)) + 0.5 P(tie), by sort-and-rank."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("labels must be binary")
    pos = labels == 1
    n1 = int(pos.sum())
    n0 = labels.size - n1
    if n1 == 0 or n0 == 0:
        raise ValueError("roc_auc needs both classes present")
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    ranks = np.empty(scores.size, dtype=np.float64)
    # average 1-based ranks over tie groups
    starts = np.flatnonzero(np.r_[True, sorted_scores[1:] != sorted_scores[:-1]])
    ends = np.r_[starts[1:], scores.size]
    for a, b in zip(starts, ends):
        ranks[order[a:b]] = (a + 1 + b) / 2.0
    u = ranks[pos].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


def roc_curve(scores, labels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(fpr, tpr, threshold) points for descending thresholds, starting at (0, 0, +inf)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    y = labels[order]
    last = np.r_[s[1:] != s[:-1], True]
    tp = np.cumsum(y == 1)[last]
    fp = np.cumsum(y == 0)[last]
    n1 = max(int((labels == 1).sum()), 1)
    n0 = max(int((labels == 0).sum()), 1)
    return (np.r_[0.0, fp / n0], np.r_[0.0, tp / n1], np.r_[np.inf, s[last]])


# ---------------------------------------------------------------------------
# experiment spec


@dataclass
class ExperimentSpec:
    dataset: dict
    holdout_class: int = 1
    split_ratio: float = 0.8
    bigan: dict = field(default_factory=dict)
    igmm: dict = field(default_factory=dict)
    alpha_w: list = field(default_factory=lambda: [0.5, 0.9])
    seed: int = 0
    output: str = "runs/experiment"
    name: str = "experiment"
    figures: bool = True

    SOURCES = ("synthetic", "trajectory-csv", "plt-dir", "mnist")

    def __post_init__(self):
        src = self.dataset.get("source")
        if src not in self.SOURCES:
            raise ValueError(f"dataset.source must be one of {self.SOURCES}, got {src!r}")
        if not 0 < self.split_ratio < 1:
            raise ValueError("split_ratio must lie in (0, 1)")
        for a in self.alpha_w:
            if not 0 <= a <= 1:
                raise ValueError("alpha_w values must lie in [0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        validate_config(d)
        d = {k: v for k, v in d.items() if k not in ("$schema", "description")}
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return {"name": self.name, "dataset": self.dataset, "holdout_class": self.holdout_class,
                "split_ratio": self.split_ratio, "bigan": self.bigan, "igmm": self.igmm,
                "alpha_w": list(self.alpha_w), "seed": self.seed, "output": self.output,
                "figures": self.figures}

    def seeds(self) -> dict:
        s = int(self.seed)
        return {"master": s, "data": s, "split": s + 1, "bigan": s + 2, "igmm": s + 3}

    def bigan_config(self, data_shape) -> BiGANConfig:
        cfg = dict(self.bigan)
        cfg.setdefault("seed", self.seeds()["bigan"])
        cfg["data_shape"] = list(data_shape)
        return BiGANConfig.from_dict(cfg)


def load_schema() -> dict:
    return json.loads(resources.files("igmmgan").joinpath("experiment.schema.json").read_text())


def validate_config(d: dict) -> None:
    try:
        jsonschema.validate(d, load_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ValueError(f"invalid experiment config at {where}: {exc.message}") from None


def _portable(spec: ExperimentSpec) -> dict:
    # the output location does not change results, so it stays out of reports
    return {k: v for k, v in spec.to_dict().items() if k != "output"}


def config_hash(spec: ExperimentSpec, inputs: bytes = b"") -> str:
    """sha1 over the canonical config JSON and input bytes, git-blob style."""
    body = json.dumps(_portable(spec), sort_keys=True).encode() + inputs
    return hashlib.sha1(b"blob %d\0" % len(body) + body).hexdigest()


# ---------------------------------------------------------------------------
# data loading


@dataclass
class LoadedData:
    x: np.ndarray  # (n, *shape), raw units
    labels: np.ndarray
    kind: list
    test_only: np.ndarray
    is_trajectory: bool
    fingerprint: bytes
    segments: dmod.SegmentSet | None = None


def load_dataset(spec: ExperimentSpec) -> LoadedData:
    ds = spec.dataset
    src = ds["source"]
    n = int(ds.get("segment_length", dmod.SEGMENT_LENGTH))
    stride = ds.get("stride")
    if src == "mnist":
        images, labels = dmod.load_mnist_idx(ds["images"], ds["labels"])
        classes = ds.get("classes")
        if classes is not None:
            keep = np.isin(labels, classes)
            images, labels = images[keep], labels[keep]
        per_class = ds.get("per_class")
        if per_class:
            idx = np.concatenate([np.flatnonzero(labels == c)[:per_class] for c in np.unique(labels)])
            idx.sort()
            images, labels = images[idx], labels[idx]
        return LoadedData(images, labels, ["normal"] * labels.size, np.zeros(labels.size, bool), False,
                          images.tobytes()[:1 << 20] + labels.tobytes())
    if src == "synthetic":
        syn = dict(ds.get("synthetic", {}))
        syn.setdefault("seed", spec.seeds()["data"])
        segs = dmod.generate_synthetic_trips(dmod.SyntheticSpec.from_dict(syn))
        test_only = segs.anomaly == 1
    elif src == "trajectory-csv":
        trajs = dmod.read_trajectory_csv(ds["path"])
        label_map = None
        if ds.get("labels_csv"):
            with open(ds["labels_csv"], newline="") as fh:
                label_map = {r["traj_id"]: int(r[ds.get("label_column", "label")]) for r in csv.DictReader(fh)}
        segs = dmod.segments_from_trajectories(trajs, n, stride, label_map)
        test_only = np.zeros(len(segs), bool)
    else:
        segs = dmod.load_plt_dir(ds["path"], n, stride)
        test_only = np.zeros(len(segs), bool)
    if len(segs) == 0:
        raise ValueError("dataset produced no segments")
    if ds.get("filter_gps_noise", False):
        noisy = dmod.max_step_displacement(segs.values) > float(ds.get("gps_noise_threshold", 0.02))
        # noisy segments never reach training; they stay scoreable as anomalies
        test_only = test_only | noisy
    return LoadedData(segs.values, segs.mode, segs.kind, test_only, True, segs.values.tobytes()[:1 << 20], segs)


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class MetricsReport:
    methods: list
    igmm: dict
    seeds: dict
    config_hash: str
    holdout_class: int
    n_train: int
    n_test: int
    anomaly_types: dict = field(default_factory=dict)
    speedup: float = float("nan")
    manifest: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    loss_curves: list = field(default_factory=list)

    def auc(self, name: str) -> float:
        return next(m["auc"] for m in self.methods if m["name"] == name)

    def to_dict(self) -> dict:
        return {
            "methods": self.methods, "igmm": self.igmm, "seeds": self.seeds, "config_hash": self.config_hash,
            "holdout_class": self.holdout_class, "n_train": self.n_train, "n_test": self.n_test,
            "anomaly_types": self.anomaly_types, "speedup": self.speedup, "manifest": self.manifest,
            "config": self.config, "loss_curves": self.loss_curves, "timing_fields": list(TIMING_KEYS),
        }


def strip_timing(obj):
    """Copy of a metrics dict without timing-dependent fields (for reproducibility checks)."""
    if isinstance(obj, dict):
        if obj.get("timing") is True:
            return {k: v for k, v in obj.items() if k != "sha256"}
        return {k: strip_timing(v) for k, v in obj.items() if k not in TIMING_KEYS}
    if isinstance(obj, list):
        return [strip_timing(v) for v in obj]
    return obj


def egbad_name(alpha_w: float) -> str:
    return f"{METHOD_EGBAD}@{alpha_w:g}"


def write_scores_csv(path: Path, records: list[ScoreRecord]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "method", "score", "seconds"])
        for r in records:
            w.writerow([r.sample_id, r.method, repr(r.score), f"{r.seconds:.9f}"])


def write_roc_csv(path: Path, curves: dict[str, tuple]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "fpr", "tpr", "threshold"])
        for name, (fpr, tpr, thr) in curves.items():
            for a, b, c in zip(fpr, tpr, thr):
                w.writerow([name, repr(float(a)), repr(float(b)), repr(float(c))])


def write_latent_csv(path: Path, z: np.ndarray, labels) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label"] + [f"z{i}" for i in range(z.shape[1])])
        for lab, row in zip(labels, z):
            w.writerow([int(lab)] + [repr(float(v)) for v in row])


def fit_multimodal(z_train, igmm_cfg: dict, seed: int, tune_labels=None) -> IGMMResult:
    """Fit the IGMM on training codes with a fixed prior or a macro-F1 grid search."""
    check_untainted(z_train, "fit_multimodal")
    z = np.asarray(z_train)
    max_points = igmm_cfg.get("max_points")
    if max_points and z.shape[0] > max_points:
        sel = np.sort(np.random.default_rng([seed, 7]).choice(z.shape[0], size=max_points, replace=False))
        z = z[sel]
        tune_labels = None if tune_labels is None else np.asarray(tune_labels)[sel]
    schedule = (int(igmm_cfg.get("sweeps", 500)), int(igmm_cfg.get("burnin", 300)), int(igmm_cfg.get("thin", 50)))
    alpha = float(igmm_cfg.get("alpha", 1.0))
    min_size = int(igmm_cfg.get("min_cluster_size", 50))
    prior_cfg = igmm_cfg.get("prior", BEST_TRAJECTORY)
    if prior_cfg == "tune":
        if tune_labels is None:
            raise ValueError("prior 'tune' needs class labels for the training data")
        grid = igmm_cfg.get("grid", {})
        kw = {k: tuple(grid[k]) for k in ("kappa_grid", "m_grid", "s_grid") if k in grid}
        tuned = tune_grid(z, tune_labels, alpha=alpha, full=schedule, seed=seed, min_cluster_size=min_size, **kw)
        result = tuned.result
        result.settings["tuned"] = tuned.best
        return result
    prior = NIWPrior.from_data(z, prior_cfg["kappa0"], prior_cfg["m"], prior_cfg["s"])
    return run_igmm(z, prior, alpha, *schedule, rng=seed, min_cluster_size=min_size,
                    extraction=igmm_cfg.get("extraction", "empirical"))


def evaluate_comparison(spec: ExperimentSpec, out_dir=None) -> MetricsReport:
    """ingest -> split -> train BiGAN -> encode train -> IGMM -> score test -> AUC + timing."""
    out = Path(out_dir or spec.output)
    out.mkdir(parents=True, exist_ok=True)
    seeds = spec.seeds()
    written: list[tuple[Path, bool]] = []
    stage = "ingest"
    try:
        loaded = load_dataset(spec)

        stage = "split"
        split = dmod.make_holdout_split(loaded.labels, spec.holdout_class, spec.split_ratio,
                                        seeds["split"], loaded.test_only)
        raw_train = loaded.x[split.train_idx]
        raw_test = taint(loaded.x[split.test_idx])
        if loaded.is_trajectory:
            x_train, stats = dmod.normalize_segments(raw_train)
            x_test = taint(stats.apply(raw_test))
        else:
            x_train, x_test, stats = raw_train, raw_test, None
        x_test = x_test if hasattr(x_test, "tainted") else taint(x_test)

        stage = "train"
        cfg = spec.bigan_config(x_train.shape[1:])
        model = train_bigan(cfg, x_train)
        model.save(out / "model")
        written += [(out / "model" / "bigan.iggn", False), (out / "model" / "bigan.iggn.json", False),
                    (out / "model" / "bigan_config.json", False)]
        if stats is not None:
            save_channel_stats(stats, out / "model")
            written.append((out / "model" / "channel_stats.json", False))
        write_history_csv(model, out / "loss_history.csv")
        written.append((out / "loss_history.csv", False))

        stage = "encode"
        z_train = model.encode(x_train)
        write_latent_csv(out / "latent_train.csv", z_train, loaded.labels[split.train_idx])
        written.append((out / "latent_train.csv", False))

        stage = "igmm"
        train_labels = loaded.labels[split.train_idx]
        result = fit_multimodal(z_train, spec.igmm, seeds["igmm"], train_labels)
        result.save(out / "model" / "igmm.json")
        written.append((out / "model" / "igmm.json", False))
        multimodal = MultimodalModel.from_igmm(result)

        stage = "score"
        test_labels = split.test_labels
        test_kind = [loaded.kind[i] for i in split.test_idx]
        held = (loaded.labels[split.test_idx] == spec.holdout_class) & ~loaded.test_only[split.test_idx]
        # the held-out-class AUC ignores injected anomalies on training classes
        auc_mask = held | (test_labels == 0)
        records = score_dataset(x_test, METHOD_MAHALANOBIS, model, multimodal, workers=1)
        scores = {METHOD_MAHALANOBIS: np.array([r.score for r in records])}
        times = {METHOD_MAHALANOBIS: float(np.mean([r.seconds for r in records]))}
        all_records = list(records)
        for a in spec.alpha_w:
            recs = score_dataset(x_test, METHOD_EGBAD, model, alpha_w=a, workers=1)
            for r in recs:
                r.method = egbad_name(a)
            scores[egbad_name(a)] = np.array([r.score for r in recs])
            times[egbad_name(a)] = float(np.mean([r.seconds for r in recs]))
            all_records += recs
        write_scores_csv(out / "scores.csv", all_records)
        written.append((out / "scores.csv", True))

        methods, curves = [], {}
        for name, s in scores.items():
            auc = roc_auc(s[auc_mask], held[auc_mask].astype(int))
            entry = {"name": name, "auc": auc, "mean_score_seconds": times[name]}
            if auc_mask.sum() != test_labels.size:
                entry["auc_all_anomalies"] = roc_auc(s, test_labels)
            methods.append(entry)
            curves[name] = roc_curve(s[auc_mask], held[auc_mask].astype(int))
        write_roc_csv(out / "roc.csv", curves)
        written.append((out / "roc.csv", False))

        by_type = {}
        for name, s in scores.items():
            groups = {}
            for kind in sorted(set(test_kind)):
                sel = np.array([k == kind for k in test_kind]) & ~held
                if sel.any():
                    groups[kind] = {"count": int(sel.sum()), "median": float(np.median(s[sel]))}
            if held.any():
                groups["held-out"] = {"count": int(held.sum()), "median": float(np.median(s[held]))}
            by_type[name] = groups

        egbad_times = [times[egbad_name(a)] for a in spec.alpha_w]
        speedup = float(np.mean(egbad_times) / times[METHOD_MAHALANOBIS]) if egbad_times else float("nan")

        stage = "report"
        if spec.figures:
            from . import plotting

            for path in plotting.render_report(out, model, curves, scores, test_kind, held):
                written.append((path, False))
        manifest = [{"path": str(p.relative_to(out)), "sha256": sha256(p.read_bytes()), "timing": timing}
                    for p, timing in written]
        report = MetricsReport(
            methods=methods,
            igmm={"components": len(result.components), "sizes": [c.size for c in result.components],
                  "settings": result.settings},
            seeds=seeds,
            config_hash=config_hash(spec, loaded.fingerprint),
            holdout_class=spec.holdout_class,
            n_train=int(split.train_idx.size),
            n_test=int(split.test_idx.size),
            anomaly_types=by_type,
            speedup=speedup,
            manifest=manifest,
            config={**_portable(spec), "bigan_resolved": cfg.to_dict(), "platform": platform.python_version()},
            loss_curves=["loss_history.csv"],
        )
        (out / "metrics.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
        return report
    except Exception as exc:
        (out / "failure.json").write_text(json.dumps({"stage": stage, "error": repr(exc),
                                                      "artifacts": [str(p) for p, _ in written]}, indent=2))
        raise StageError(stage, exc) from exc


# ---------------------------------------------------------------------------
# persistence of a fitted pipeline


def persist_model(model: BiGANModel, igmm_result: IGMMResult, path, channel_stats=None) -> Path:
    path = Path(path)
    model.save(path)
    igmm_result.save(path / "igmm.json")
    if channel_stats is not None:
        save_channel_stats(channel_stats, path)
    return path


def save_channel_stats(stats, directory) -> Path:
    p = Path(directory) / "channel_stats.json"
    p.write_text(json.dumps(stats.to_dict(), indent=2))
    return p


def load_model(path) -> tuple[BiGANModel, IGMMResult]:
    path = Path(path)
    model = BiGANModel.load(path)
    result = IGMMResult.load(path / "igmm.json")
    return model, result


def load_channel_stats(path):
    p = Path(path) / "channel_stats.json"
    return dmod.ChannelStats.from_dict(json.loads(p.read_text())) if p.exists() else None


__all__ = [
    "ChecksumError", "FormatError", "VersionError", "ExperimentSpec", "MetricsReport", "StageError",
    "evaluate_comparison", "load_model", "persist_model", "roc_auc", "roc_curve", "strip_timing",
    "validate_config",
]
