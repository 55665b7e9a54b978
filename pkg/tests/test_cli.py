import json
import subprocess
import sys
from pathlib import Path

import pytest

from igmmgan.cli import main

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture
def cfg(tmp_path):
    d = {"dataset": {"source": "synthetic", "synthetic": {"n_segments": 200, "anomaly_fraction": 0.05}},
         "holdout_class": 1, "bigan": {"total_steps": 20, "batch_size": 32},
         "igmm": {"sweeps": 6, "burnin": 3, "thin": 1, "min_cluster_size": 10},
         "output": str(tmp_path / "default_out")}
    p = tmp_path / "exp.json"
    p.write_text(json.dumps(d))
    return p


def test_unknown_subcommand_exits_1(capsys):
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 1
    assert "usage" in capsys.readouterr().err


def test_missing_config_names_path(capsys, tmp_path):
    missing = tmp_path / "nope.json"
    assert main(["evaluate", "--config", str(missing)]) == 1
    assert str(missing) in capsys.readouterr().err


def test_invalid_config_is_usage_error(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{"dataset": {"source": "carrier-pigeon"}}')
    assert main(["evaluate", "--config", str(p)]) == 1
    p.write_text("{not json")
    assert main(["evaluate", "--config", str(p)]) == 1


def test_runtime_failure_exits_2(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["encode", "--model", str(tmp_path / "nomodel"), "--input", "x.iggn", "--out", str(out)]) == 2
    assert not out.exists()


def test_gen_data_is_byte_identical(cfg, tmp_path):
    for name in ("a", "b"):
        assert main(["gen-data", "--config", str(cfg), "--seed", "7", "--out", str(tmp_path / name)]) == 0
    for f in ("segments.iggn", "segments.iggn.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert main(["gen-data", "--config", str(cfg), "--seed", "8", "--out", str(tmp_path / "c")]) == 0
    assert (tmp_path / "a" / "segments.iggn").read_bytes() != (tmp_path / "c" / "segments.iggn").read_bytes()


def test_gen_data_noise_filter(cfg, tmp_path):
    assert main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "f"), "--filter-gps-noise"]) == 0
    from igmmgan.data import load_segment_archive

    segs, _ = load_segment_archive(tmp_path / "f" / "segments.iggn")
    assert "gps-noise" not in segs.kind


def test_evaluate_writes_metrics_and_roc(cfg, tmp_path):
    out = tmp_path / "ev"
    assert main(["evaluate", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "metrics.json").exists() and (out / "roc.csv").exists()
    assert (out / "figures" / "roc.png").exists()


def test_stepwise_pipeline(cfg, tmp_path):
    d = tmp_path
    assert main(["gen-data", "--config", str(cfg), "--out", str(d / "data")]) == 0
    assert main(["train", "--config", str(cfg), "--out", str(d / "t"), "--steps", "10"]) == 0
    assert main(["fit-igmm", "--config", str(cfg), "--latent", str(d / "t" / "latent_train.csv"),
                 "--out", str(d / "t" / "model")]) == 0
    assert main(["encode", "--model", str(d / "t" / "model"), "--input", str(d / "data" / "segments.iggn"),
                 "--out", str(d / "e")]) == 0
    lines = (d / "e" / "latent.csv").read_text().splitlines()
    assert len(lines) == 201 and lines[0].startswith("label,z0")
    assert main(["score", "--model", str(d / "t" / "model"), "--input", str(d / "data" / "segments.iggn"),
                 "--out", str(d / "s")]) == 0
    rows = (d / "s" / "scores.csv").read_text().splitlines()
    assert len(rows) == 1 + 3 * 200
    assert main(["generate-samples", "--model", str(d / "t" / "model"), "--n", "8", "--out", str(d / "g")]) == 0
    assert (d / "g" / "figures" / "samples.png").exists()


def test_grid_search(cfg, tmp_path):
    raw = json.loads(cfg.read_text())
    raw["igmm"]["grid"] = {"kappa_grid": [0.1, 1.0], "m_grid": ["d+15"], "s_grid": [5.0]}
    cfg.write_text(json.dumps(raw))
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "t"), "--steps", "5"]) == 0
    rc = main(["grid-search", "--config", str(cfg), "--latent", str(tmp_path / "t" / "latent_train.csv"),
               "--out", str(tmp_path / "g")])
    assert rc == 0
    assert len((tmp_path / "g" / "grid.csv").read_text().splitlines()) == 3
    assert "kappa0" in json.loads((tmp_path / "g" / "grid_best.json").read_text())


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "igmmgan", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "evaluate" in r.stdout
    r = subprocess.run([sys.executable, "-m", "igmmgan", "nope"], capture_output=True, text=True)
    assert r.returncode == 1
