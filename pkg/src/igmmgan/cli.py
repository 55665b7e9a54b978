"""Command-line entry point.

Exit codes: 0 success, 1 usage error (bad arguments, missing or invalid
config), 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data as dmod
from .bigan import BiGANModel, sample_latent, train_bigan, write_history_csv
from .evaluate import (ExperimentSpec, StageError, egbad_name, evaluate_comparison, fit_multimodal,
                       load_channel_stats, load_dataset, save_channel_stats, write_latent_csv, write_scores_csv)
from .igmm import IGMMResult, tune_grid
from .scoring import METHOD_EGBAD, METHOD_MAHALANOBIS, MultimodalModel, score_dataset

log = logging.getLogger("igmmgan")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# helpers


def _load_spec(args, required=True) -> ExperimentSpec | None:
    if args.config is None:
        if required:
            raise UsageError("--config is required for this subcommand")
        return None
    path = Path(args.config)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out is not None:
        raw["output"] = args.out
    if getattr(args, "filter_gps_noise", False):
        raw["dataset"] = {**raw.get("dataset", {}), "filter_gps_noise": True}
    try:
        return ExperimentSpec.from_dict(raw)
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None


def _out_dir(args, spec: ExperimentSpec | None, default: str) -> Path:
    out = Path(args.out or (spec.output if spec else default))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _need(value, flag: str):
    if value is None:
        raise UsageError(f"{flag} is required")
    return value


def _read_latent(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "label":
        raise ValueError(f"{path}: expected a latent CSV with a leading 'label' column")
    body = np.array(rows[1:], dtype=np.float64)
    return body[:, 1:], body[:, 0].astype(np.int64)


def _model_inputs(model_dir: Path, values: np.ndarray) -> np.ndarray:
    stats = load_channel_stats(model_dir)
    return stats.apply(values) if stats is not None else values


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_data(args) -> int:
    spec = _load_spec(args)
    if spec.dataset["source"] == "mnist":
        raise UsageError("gen-data builds segment archives; mnist sources are read directly")
    out = _out_dir(args, spec, "runs/data")
    loaded = load_dataset(spec)
    segs = loaded.segments
    if spec.dataset.get("filter_gps_noise"):
        segs = dmod.filter_gps_noise(segs, float(spec.dataset.get("gps_noise_threshold", 0.02)))
    path = dmod.save_segment_archive(out / "segments.iggn", segs)
    print(f"wrote {len(segs)} segments to {path}")
    return EXIT_OK


def cmd_train(args) -> int:
    spec = _load_spec(args)
    if args.steps is not None:
        spec.bigan = {**spec.bigan, "total_steps": args.steps}
    out = _out_dir(args, spec, "runs/train")
    loaded = load_dataset(spec)
    split = dmod.make_holdout_split(loaded.labels, spec.holdout_class, spec.split_ratio,
                                    spec.seeds()["split"], loaded.test_only)
    x_train = loaded.x[split.train_idx]
    stats = None
    if loaded.is_trajectory:
        x_train, stats = dmod.normalize_segments(x_train)
    model = train_bigan(spec.bigan_config(x_train.shape[1:]), x_train)
    model.save(out / "model")
    if stats is not None:
        save_channel_stats(stats, out / "model")
    write_history_csv(model, out / "loss_history.csv")
    write_latent_csv(out / "latent_train.csv", model.encode(x_train), loaded.labels[split.train_idx])
    (out / "split.json").write_text(json.dumps({"train": split.train_idx.tolist(),
                                                "test": split.test_idx.tolist(),
                                                "test_labels": split.test_labels.tolist()}))
    from .plotting import plot_losses

    (out / "figures").mkdir(exist_ok=True)
    plot_losses(model.history, out / "figures" / "loss_curves.png")
    print(f"trained {model.config.total_steps} steps; model in {out / 'model'}")
    return EXIT_OK


def _archive_values(args, model_dir: Path) -> tuple[np.ndarray, np.ndarray]:
    segs, _ = dmod.load_segment_archive(_need(args.input, "--input"))
    return _model_inputs(model_dir, segs.values), segs.mode


def cmd_encode(args) -> int:
    model_dir = Path(_need(args.model, "--model"))
    model = BiGANModel.load(model_dir)
    out = _out_dir(args, None, "runs/encode")
    x, labels = _archive_values(args, model_dir)
    z = model.encode(x)
    write_latent_csv(out / "latent.csv", z, labels)
    print(f"wrote {z.shape[0]} codes of dimension {z.shape[1]} to {out / 'latent.csv'}")
    return EXIT_OK


def cmd_fit_igmm(args) -> int:
    spec = _load_spec(args, required=False)
    z, labels = _read_latent(_need(args.latent, "--latent"))
    out = _out_dir(args, spec, "runs/igmm")
    igmm_cfg = spec.igmm if spec else {}
    seed = spec.seeds()["igmm"] if spec else (args.seed or 0)
    result = fit_multimodal(z, igmm_cfg, seed, labels)
    result.save(out / "igmm.json")
    print(f"{len(result.components)} components, sizes {[c.size for c in result.components]}")
    return EXIT_OK


def cmd_score(args) -> int:
    model_dir = Path(_need(args.model, "--model"))
    model = BiGANModel.load(model_dir)
    out = _out_dir(args, None, "runs/score")
    x, _ = _archive_values(args, model_dir)
    records = []
    if args.method in (METHOD_MAHALANOBIS, "all"):
        igmm_path = Path(args.igmm or model_dir / "igmm.json")
        multimodal = MultimodalModel.from_igmm(IGMMResult.load(igmm_path))
        records += score_dataset(x, METHOD_MAHALANOBIS, model, multimodal)
    if args.method in (METHOD_EGBAD, "all"):
        for a in args.alpha_w:
            recs = score_dataset(x, METHOD_EGBAD, model, alpha_w=a)
            for r in recs:
                r.method = egbad_name(a)
            records += recs
    write_scores_csv(out / "scores.csv", records)
    print(f"wrote {len(records)} scores to {out / 'scores.csv'}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    spec = _load_spec(args)
    if args.no_figures:
        spec.figures = False
    report = evaluate_comparison(spec)
    for m in report.methods:
        print(f"{m['name']:<20} auc={m['auc']:.4f} mean_seconds={m['mean_score_seconds']:.2e}")
    print(f"speedup {report.speedup:.2f}x; components {report.igmm['sizes']}; output {spec.output}")
    return EXIT_OK


def cmd_grid_search(args) -> int:
    spec = _load_spec(args, required=False)
    z, labels = _read_latent(_need(args.latent, "--latent"))
    out = _out_dir(args, spec, "runs/grid")
    igmm_cfg = spec.igmm if spec else {}
    grid = igmm_cfg.get("grid", {})
    kw = {k: tuple(grid[k]) for k in ("kappa_grid", "m_grid", "s_grid") if k in grid}
    seed = spec.seeds()["igmm"] if spec else (args.seed or 0)
    tuned = tune_grid(z, labels, alpha=float(igmm_cfg.get("alpha", 1.0)), seed=seed,
                      min_cluster_size=int(igmm_cfg.get("min_cluster_size", 50)), rerun=False, **kw)
    with (out / "grid.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["kappa0", "m", "m_value", "s", "macro_f1", "failed", "error"])
        w.writeheader()
        for row in tuned.table:
            w.writerow({**{"error": ""}, **row})
    (out / "grid_best.json").write_text(json.dumps(tuned.best, indent=2))
    print(f"best {tuned.best}")
    return EXIT_OK


def cmd_generate_samples(args) -> int:
    model_dir = Path(_need(args.model, "--model"))
    model = BiGANModel.load(model_dir)
    out = _out_dir(args, None, "runs/samples")
    rng = np.random.default_rng(args.seed or 0)
    x = model.generate(sample_latent(args.n, model.config.latent_dim, rng))
    stats = load_channel_stats(model_dir)
    if stats is not None:
        x = stats.invert(x)
    from .plotting import plot_samples
    from .weights import save_tensors

    save_tensors(out / "samples.iggn", {"samples": x})
    (out / "figures").mkdir(exist_ok=True)
    plot_samples(x[: min(args.n, 32)], out / "figures" / "samples.png")
    print(f"wrote {args.n} samples to {out / 'samples.iggn'}")
    return EXIT_OK


COMMANDS = {
    "gen-data": (cmd_gen_data, "generate or ingest trajectory segments into an archive"),
    "train": (cmd_train, "train the BiGAN on the training split"),
    "encode": (cmd_encode, "export latent codes for a segment archive"),
    "fit-igmm": (cmd_fit_igmm, "fit the infinite Gaussian mixture to latent codes"),
    "score": (cmd_score, "score a segment archive"),
    "evaluate": (cmd_evaluate, "run the full held-out-class comparison"),
    "grid-search": (cmd_grid_search, "search the NIW prior grid by macro-F1"),
    "generate-samples": (cmd_generate_samples, "draw samples from the generator"),
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON experiment file")
    common.add_argument("--seed", type=int, help="override the master seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="igmmgan", description="IGMM-GAN multimodal anomaly detection")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True
    ps = {}
    for name, (_, help_text) in COMMANDS.items():
        ps[name] = sub.add_parser(name, parents=[common], help=help_text)
    ps["train"].add_argument("--steps", type=int, help="override bigan.total_steps")
    for name in ("gen-data", "train", "evaluate"):
        ps[name].add_argument("--filter-gps-noise", action="store_true",
                              help="keep segments with a large single-step jump out of training")
    for name in ("encode", "score", "generate-samples"):
        ps[name].add_argument("--model", help="model directory")
    for name in ("encode", "score"):
        ps[name].add_argument("--input", help="segment archive (.iggn)")
    for name in ("fit-igmm", "grid-search"):
        ps[name].add_argument("--latent", help="latent CSV with a leading label column")
    ps["score"].add_argument("--igmm", help="igmm.json (default: <model>/igmm.json)")
    ps["score"].add_argument("--method", choices=[METHOD_MAHALANOBIS, METHOD_EGBAD, "all"], default="all")
    ps["score"].add_argument("--alpha-w", type=float, nargs="+", default=[0.5, 0.9])
    ps["evaluate"].add_argument("--no-figures", action="store_true")
    ps["generate-samples"].add_argument("--n", type=int, default=64)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = COMMANDS[args.command][0]
    try:
        return handler(args)
    except UsageError as exc:
        print(f"igmmgan {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StageError as exc:
        print(f"igmmgan {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - any runtime failure maps to exit 2
        log.debug("runtime failure", exc_info=True)
        print(f"igmmgan {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
