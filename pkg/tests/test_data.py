import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from igmmgan import data as D
from igmmgan.weights import ChecksumError


def track(n=40, t0=1000.0, dt=5.0):
    return [D.GpsPoint(t0 + i * dt, 39.9 + 1e-4 * i, 116.4 - 2e-4 * i) for i in range(n)]


def test_plt_round_trip():
    pts = track(10)
    buf = io.StringIO()
    D.write_geolife_plt(pts, buf)
    back = D.parse_geolife_plt(buf.getvalue())
    assert len(back) == 10
    for a, b in zip(pts, back):
        assert a.lat == pytest.approx(b.lat, abs=1e-6)
        assert a.timestamp == pytest.approx(b.timestamp, abs=1e-4)


def test_plt_rejects_bad_lines():
    head = "h\n" * 6
    with pytest.raises(D.DataFormatError, match="line 8"):
        D.parse_geolife_plt(head + "39.9,116.4,0,0,40000.1,d,t\n39.9,116.4,0,0,40000.0,d,t\n")
    with pytest.raises(D.DataFormatError, match="line 7"):
        D.parse_geolife_plt(head + "99.9,116.4,0,0,40000.1,d,t\n")
    with pytest.raises(D.DataFormatError, match="line 7"):
        D.parse_geolife_plt(head + "abc,116.4,0,0,40000.1,d,t\n")


def test_plt_days_to_seconds():
    pts = D.parse_geolife_plt("h\n" * 6 + "39.9,116.4,0,0,1.5,d,t\n")
    assert pts[0].timestamp == 1.5 * 86400


def test_velocities_forward_difference():
    pts = [D.GpsPoint(0, 0.0, 0.0), D.GpsPoint(2, 1.0, 0.5), D.GpsPoint(4, 1.0, 1.5)]
    np.testing.assert_allclose(D.compute_velocities(pts), [[0.5, 0.25], [0.0, 0.5], [0.0, 0.5]])
    with pytest.raises(ValueError):
        D.compute_velocities(pts[:1])


@given(st.integers(32, 200), st.integers(1, 40), st.integers(4, 32))
def test_segment_count_and_content(npts, stride, n):
    pts = track(npts)
    segs = D.segment_trip(pts, n=n, stride=stride)
    assert len(segs) == (npts - n) // stride + 1
    for k, s in enumerate(segs):
        assert s.values.shape == (4, n)
        assert s.values[0, 0] == pts[k * stride].lat


def test_short_trip_gives_no_segments():
    assert D.segment_trip(track(5), n=32) == []


def test_trajectory_csv(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("traj_id,timestamp,lat,lon\na,0,1,1\na,1,1.1,1\nb,0,2,2\n")
    trajs = D.read_trajectory_csv(p)
    assert list(trajs) == ["a", "b"] and len(trajs["a"]) == 2
    p.write_text("traj_id,timestamp,lat,lon\na,1,1,1\na,1,1.1,1\n")
    with pytest.raises(D.DataFormatError, match="line 3"):
        D.read_trajectory_csv(p)
    p.write_text("id,timestamp,lat,lon\n")
    with pytest.raises(D.DataFormatError, match="traj_id"):
        D.read_trajectory_csv(p)


@given(st.integers(0, 2**31))
def test_normalization_round_trip(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(9, 4, 8)) * [[3], [0.1], [5], [1e-3]] + [[40], [116], [0], [0]]
    z, stats = D.normalize_segments(x)
    np.testing.assert_allclose(z.mean(axis=(0, 2)), 0, atol=1e-9)
    np.testing.assert_allclose(z.std(axis=(0, 2)), 1, atol=1e-9)
    np.testing.assert_allclose(stats.invert(z), x, rtol=1e-12, atol=1e-9)


def test_constant_channel_maps_to_zero():
    x = np.ones((3, 4, 5))
    z, stats = D.normalize_segments(x)
    assert np.all(z == 0)


def test_synthetic_counts_and_determinism():
    spec = D.SyntheticSpec(n_segments=200, anomaly_fraction=0.05, seed=3)
    a = D.generate_synthetic_trips(spec)
    b = D.generate_synthetic_trips(spec)
    np.testing.assert_array_equal(a.values, b.values)
    assert a.anomaly.sum() == 10
    assert {k for k in a.kind if k != "normal"} == set(D.ANOMALY_TYPES)
    assert set(np.unique(a.mode)) == {0, 1, 2}
    assert a.values.shape == (200, 4, 32)


def test_segments_stay_on_their_lane():
    spec = D.SyntheticSpec(n_segments=150, seed=1)
    segs = D.generate_synthetic_trips(spec)
    lanes = []
    for w in D.mode_templates(spec):
        route = D._Route(w)
        lanes.append(route.at(np.linspace(0, route.length, 4000)))
    for seg, mode in zip(segs.values, segs.mode):
        dist = [np.hypot(seg[0][:, None] - lane[0][None], seg[1][:, None] - lane[1][None]).min(1).mean()
                for lane in lanes]
        assert int(np.argmin(dist)) == mode


def test_gps_noise_is_largest_jump():
    segs = D.generate_synthetic_trips(D.SyntheticSpec(n_segments=300, anomaly_fraction=0.1, seed=2))
    jump = D.max_step_displacement(segs.values)
    noisy = np.array([k == "gps-noise" for k in segs.kind])
    assert jump[noisy].min() > jump[~noisy].max()
    cut = 0.5 * (jump[noisy].min() + jump[~noisy].max())
    assert len(D.filter_gps_noise(segs, cut)) == (~noisy).sum()
    # the default threshold also separates them
    assert len(D.filter_gps_noise(segs)) == (~noisy).sum()


def test_synthetic_spec_validation():
    with pytest.raises(ValueError):
        D.SyntheticSpec(anomaly_fraction=1.0)
    with pytest.raises(ValueError):
        D.SyntheticSpec(anomaly_types=("meteor",))
    with pytest.raises(ValueError):
        D.SyntheticSpec(gps_noise_scale=5e-4)
    with pytest.raises(ValueError, match="unknown"):
        D.SyntheticSpec.from_dict({"modes": 3})


def test_mnist_idx_round_trip(tmp_path, rng):
    imgs = rng.integers(0, 256, size=(5, 28, 28)).astype(np.uint8)
    labs = np.array([0, 1, 2, 3, 9])
    D.write_mnist_idx(imgs, labs, tmp_path / "i", tmp_path / "l")
    x, y = D.load_mnist_idx(tmp_path / "i", tmp_path / "l")
    np.testing.assert_array_equal(y, labs)
    np.testing.assert_allclose(x * 255, imgs)
    raw = (tmp_path / "i").read_bytes()
    (tmp_path / "i").write_bytes(raw[:-10])
    with pytest.raises(D.DataFormatError, match="truncated"):
        D.load_mnist_idx(tmp_path / "i", tmp_path / "l")
    (tmp_path / "i").write_bytes(b"\x00\x00\x08\x01" + raw[4:])
    with pytest.raises(D.DataFormatError, match="magic"):
        D.load_mnist_idx(tmp_path / "i", tmp_path / "l")


@given(st.lists(st.integers(0, 3), min_size=4, max_size=100), st.integers(0, 3), st.floats(0.1, 0.9))
def test_holdout_split_partitions(labels, held, ratio):
    labels = np.array(labels)
    if not (labels == held).any():
        with pytest.raises(ValueError):
            D.make_holdout_split(labels, held, ratio)
        return
    extra = np.arange(labels.size) % 7 == 0
    sp = D.make_holdout_split(labels, held, ratio, 0, test_only=extra)
    allidx = np.concatenate([sp.train_idx, sp.test_idx])
    assert sorted(allidx.tolist()) == list(range(labels.size))
    assert not np.any(labels[sp.train_idx] == held)
    assert not np.any(extra[sp.train_idx])
    expected = (labels[sp.test_idx] == held) | extra[sp.test_idx]
    np.testing.assert_array_equal(sp.test_labels, expected.astype(int))


def test_segment_archive_round_trip(tmp_path):
    segs = D.generate_synthetic_trips(D.SyntheticSpec(n_segments=20, anomaly_fraction=0.1))
    _, stats = D.normalize_segments(segs)
    path = D.save_segment_archive(tmp_path / "s.iggn", segs, stats)
    back, st2 = D.load_segment_archive(path)
    np.testing.assert_array_equal(back.values, segs.values)
    assert back.kind == segs.kind and back.source == segs.source
    np.testing.assert_array_equal(st2.mean, stats.mean)
    raw = bytearray(path.read_bytes())
    raw[100] ^= 1
    path.write_bytes(bytes(raw))
    with pytest.raises(ChecksumError):
        D.load_segment_archive(path)


def test_plt_dir_skips_malformed_with_warning(tmp_path, caplog):
    for user in ("000", "001"):
        d = tmp_path / user / "Trajectory"
        d.mkdir(parents=True)
        with (d / "a.plt").open("w") as fh:
            D.write_geolife_plt(track(70), fh)
    (tmp_path / "001" / "Trajectory" / "bad.plt").write_text("h\n" * 6 + "x,y\n")
    with caplog.at_level("WARNING"):
        segs = D.load_plt_dir(tmp_path, n=32)
    assert "bad.plt" in caplog.text
    assert sorted(set(segs.mode.tolist())) == [0, 1]
    assert len(segs) == 4
