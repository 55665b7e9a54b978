import json
import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from igmmgan import evaluate as E
from igmmgan.bigan import is_tainted
from igmmgan.weights import ChecksumError, VersionError, encode_tensors


def brute_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


two_class = st.integers(2, 200).flatmap(lambda n: st.tuples(
    st.lists(st.integers(-5, 5).map(float) | st.floats(-1e3, 1e3), min_size=n, max_size=n),
    st.lists(st.integers(0, 1), min_size=n, max_size=n))).filter(lambda t: 0 < sum(t[1]) < len(t[1]))


def test_worked_example():
    assert E.roc_auc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75


def test_trivial_cases():
    assert E.roc_auc([0, 1, 2, 3], [0, 0, 1, 1]) == 1.0
    assert E.roc_auc([2, 2, 2, 2], [0, 1, 0, 1]) == 0.5
    with pytest.raises(ValueError, match="both classes"):
        E.roc_auc([1, 2], [1, 1])
    with pytest.raises(ValueError):
        E.roc_auc([1, 2], [0, 2])


@given(two_class)
def test_auc_equals_brute_force_exactly(case):
    s, y = case
    assert E.roc_auc(s, y) == brute_auc(s, y)


@given(two_class)
def test_auc_complement_is_exact(case):
    s, y = case
    y = np.array(y)
    assert E.roc_auc(s, y) + E.roc_auc(s, 1 - y) == 1.0


@given(two_class, st.sampled_from([np.exp, np.arctan, lambda v: v ** 3, lambda v: 7 * v - 3]))
def test_auc_monotone_invariance(case, fn):
    s, y = case
    s = np.array(s) / 1e3
    t = fn(s)
    # the map must stay strictly increasing after rounding
    assume(np.unique(t).size == np.unique(s).size)
    assert E.roc_auc(t, y) == E.roc_auc(s, y)


@given(two_class)
def test_roc_curve_area_matches_auc(case):
    s, y = case
    fpr, tpr, thr = E.roc_curve(s, y)
    assert fpr[0] == tpr[0] == 0 and fpr[-1] == tpr[-1] == 1
    assert np.all(np.diff(fpr) >= 0) and np.all(np.diff(tpr) >= 0)
    assert np.trapezoid(tpr, fpr) == pytest.approx(E.roc_auc(s, y), abs=1e-12)


def quick_spec(tmp_path, **kw):
    d = {"dataset": {"source": "synthetic", "synthetic": {"n_segments": 240, "anomaly_fraction": 0.05}},
         "holdout_class": 2, "bigan": {"total_steps": 40, "batch_size": 32},
         "igmm": {"sweeps": 8, "burnin": 4, "thin": 2, "min_cluster_size": 10},
         "alpha_w": [0.9], "seed": 5, "output": str(tmp_path / "run"), "figures": False}
    d.update(kw)
    return E.ExperimentSpec.from_dict(d)


def test_report_structure(tmp_path):
    spec = quick_spec(tmp_path)
    rep = E.evaluate_comparison(spec)
    assert [m["name"] for m in rep.methods] == ["igmm-mahalanobis", "egbad@0.9"]
    for m in rep.methods:
        assert 0 <= m["auc"] <= 1 and m["mean_score_seconds"] > 0
    out = Path(spec.output)
    metrics = json.loads((out / "metrics.json").read_text())
    assert {"methods", "igmm", "seeds", "config_hash"} <= set(metrics)
    assert metrics["igmm"]["components"] == len(metrics["igmm"]["sizes"])
    with open(out / "roc.csv") as fh:
        assert fh.readline().strip() == "method,fpr,tpr,threshold"
    with open(out / "scores.csv") as fh:
        assert fh.readline().strip() == "id,method,score,seconds"


def test_manifest_covers_every_file(tmp_path):
    spec = quick_spec(tmp_path, figures=True)
    rep = E.evaluate_comparison(spec)
    out = Path(spec.output)
    listed = {m["path"]: m for m in rep.manifest}
    on_disk = {str(p.relative_to(out)) for p in out.rglob("*") if p.is_file()} - {"metrics.json"}
    assert on_disk == set(listed)
    from igmmgan.weights import sha256

    for path, entry in listed.items():
        assert entry["sha256"] == sha256((out / path).read_bytes())
    assert listed["scores.csv"]["timing"] is True
    assert any(p.startswith("figures/") and p.endswith(".png") for p in listed)


def test_rerun_is_identical_modulo_timing(tmp_path):
    a = E.evaluate_comparison(quick_spec(tmp_path / "a", figures=True))
    b = E.evaluate_comparison(quick_spec(tmp_path / "b", figures=True))
    da, db = (json.loads((tmp_path / n / "run" / "metrics.json").read_text()) for n in "ab")
    assert json.dumps(E.strip_timing(da), sort_keys=True) == json.dumps(E.strip_timing(db), sort_keys=True)
    assert "output" not in da["config"]
    assert [m["auc"] for m in a.methods] == [m["auc"] for m in b.methods]


def test_test_data_never_reaches_fitting(tmp_path, monkeypatch):
    seen = {}
    real_train, real_fit = E.train_bigan, E.fit_multimodal

    def spy_train(cfg, x, *a, **k):
        seen["train"] = (is_tainted(x), x.shape[0])
        return real_train(cfg, x, *a, **k)

    def spy_fit(z, *a, **k):
        seen["fit"] = (is_tainted(z), z.shape[0])
        return real_fit(z, *a, **k)

    monkeypatch.setattr(E, "train_bigan", spy_train)
    monkeypatch.setattr(E, "fit_multimodal", spy_fit)
    rep = E.evaluate_comparison(quick_spec(tmp_path))
    assert seen["train"] == (False, rep.n_train)
    assert seen["fit"] == (False, rep.n_train)


def test_stage_failure_keeps_partial_artifacts(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("sampler exploded")

    monkeypatch.setattr(E, "fit_multimodal", boom)
    spec = quick_spec(tmp_path)
    with pytest.raises(E.StageError) as info:
        E.evaluate_comparison(spec)
    assert info.value.stage == "igmm"
    out = Path(spec.output)
    assert (out / "model" / "bigan.iggn").exists()
    assert json.loads((out / "failure.json").read_text())["stage"] == "igmm"


def test_spec_validation(tmp_path):
    with pytest.raises(ValueError, match="dataset"):
        E.ExperimentSpec.from_dict({"dataset": {"source": "mnist"}})
    with pytest.raises(ValueError, match="(?i)additional"):
        E.ExperimentSpec.from_dict({"dataset": {"source": "synthetic"}, "bogus": 1})
    with pytest.raises(ValueError):
        E.ExperimentSpec.from_dict({"dataset": {"source": "synthetic"}, "split_ratio": 1.5})


def test_shipped_configs_validate():
    root = Path(__file__).resolve().parents[1] / "configs"
    files = sorted(root.glob("*.json"))
    assert files
    for f in files:
        E.ExperimentSpec.load(f)


def test_persist_round_trip_and_faults(tmp_path):
    spec = quick_spec(tmp_path)
    E.evaluate_comparison(spec)
    model, result = E.load_model(Path(spec.output) / "model")
    path = E.persist_model(model, result, tmp_path / "saved")
    m2, r2 = E.load_model(path)
    from igmmgan.scoring import METHOD_EGBAD, METHOD_MAHALANOBIS, MultimodalModel, batch_scores

    probe = np.random.default_rng(0).normal(size=(16, 4, 32))
    for method in (METHOD_MAHALANOBIS, METHOD_EGBAD):
        a = batch_scores(probe, method, model, MultimodalModel.from_igmm(result))
        b = batch_scores(probe, method, m2, MultimodalModel.from_igmm(r2))
        assert np.array_equal(a, b)

    weights = path / "bigan.iggn"
    raw = bytearray(weights.read_bytes())
    raw[len(raw) // 2] ^= 0x10
    weights.write_bytes(bytes(raw))
    with pytest.raises(ChecksumError):
        E.load_model(path)

    blob = encode_tensors(model.state_dict(), version=2)
    weights.write_bytes(blob)
    man = json.loads((path / "bigan.iggn.json").read_text())
    from igmmgan.weights import sha256

    man["sha256"] = sha256(blob)
    (path / "bigan.iggn.json").write_text(json.dumps(man))
    with pytest.raises(VersionError):
        E.load_model(path)


def test_config_hash_tracks_inputs(tmp_path):
    s = quick_spec(tmp_path)
    assert E.config_hash(s) == E.config_hash(quick_spec(tmp_path / "elsewhere"))
    assert E.config_hash(s) != E.config_hash(quick_spec(tmp_path, seed=6))
    assert E.config_hash(s, b"a") != E.config_hash(s, b"b")
