"""Trajectory ingestion, segmentation, normalization and synthetic trips.

Segments are stored as ``(n, 4, N)`` arrays with channel order
(lat, lon, lat-velocity, lon-velocity); velocities are forward differences
in degrees/second with the last value repeated.
"""

from __future__ import annotations

import csv
import gzip
import io
import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np
from scipy.interpolate import CubicSpline

from .weights import load_tensors, save_tensors

log = logging.getLogger(__name__)

SEGMENT_LENGTH = 32
SECONDS_PER_DAY = 86400.0
PLT_HEADER_LINES = 6
ANOMALY_TYPES = ("detour", "speed-shift", "gps-noise")
CHANNELS = ("lat", "lon", "vlat", "vlon")


class DataFormatError(ValueError):
    pass


@dataclass(frozen=True)
class GpsPoint:
    timestamp: float
    lat: float
    lon: float

    def __post_init__(self):
        if not abs(self.lat) <= 90:
            raise DataFormatError(f"latitude {self.lat} out of range")
        if not abs(self.lon) <= 180:
            raise DataFormatError(f"longitude {self.lon} out of range")


@dataclass
class TripSegment:
    values: np.ndarray  # (4, N)
    source: str = ""
    mode: int = -1
    anomaly: int = 0
    kind: str = "normal"


@dataclass
class SegmentSet:
    """Column-oriented batch of segments with labels."""

    values: np.ndarray  # (n, 4, N)
    mode: np.ndarray
    anomaly: np.ndarray
    kind: list
    source: list = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1, 4, self.values.shape[-1]) \
            if np.size(self.values) else np.zeros((0, 4, SEGMENT_LENGTH))
        n = self.values.shape[0]
        self.mode = np.asarray(self.mode, dtype=np.int64).reshape(n)
        self.anomaly = np.asarray(self.anomaly, dtype=np.int64).reshape(n)
        self.kind = list(self.kind)
        if not self.source:
            self.source = [""] * n
        if not (len(self.kind) == len(self.source) == n):
            raise ValueError("label columns must match the number of segments")
        if not np.all(np.isfinite(self.values)):
            raise DataFormatError("segments contain non-finite values")

    def __len__(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, i: int) -> TripSegment:
        return TripSegment(self.values[i], self.source[i], int(self.mode[i]), int(self.anomaly[i]), self.kind[i])

    def subset(self, idx) -> "SegmentSet":
        idx = np.asarray(idx)
        if idx.dtype == bool:
            idx = np.flatnonzero(idx)
        return SegmentSet(self.values[idx], self.mode[idx], self.anomaly[idx],
                          [self.kind[i] for i in idx], [self.source[i] for i in idx])

    @classmethod
    def from_segments(cls, segments: Iterable[TripSegment]) -> "SegmentSet":
        segs = list(segments)
        if not segs:
            return cls(np.zeros((0, 4, SEGMENT_LENGTH)), [], [], [], [])
        return cls(np.stack([s.values for s in segs]), [s.mode for s in segs], [s.anomaly for s in segs],
                   [s.kind for s in segs], [s.source for s in segs])

    @classmethod
    def concat(cls, parts: list["SegmentSet"]) -> "SegmentSet":
        parts = [p for p in parts if len(p)]
        return cls(np.concatenate([p.values for p in parts]), np.concatenate([p.mode for p in parts]),
                   np.concatenate([p.anomaly for p in parts]), sum((p.kind for p in parts), []),
                   sum((p.source for p in parts), []))


# ---------------------------------------------------------------------------
# parsing


def parse_geolife_plt(stream: TextIO | str) -> list[GpsPoint]:
    """Parse a GeoLife ``.plt`` file (6 header lines, then lat,lon,0,alt,days,date,time)."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    points: list[GpsPoint] = []
    for lineno, line in enumerate(stream, start=1):
        if lineno <= PLT_HEADER_LINES or not line.strip():
            continue
        fields = line.strip().split(",")
        if len(fields) < 5:
            raise DataFormatError(f"line {lineno}: expected 7 fields, got {len(fields)}")
        try:
            lat, lon, days = float(fields[0]), float(fields[1]), float(fields[4])
        except ValueError as exc:
            raise DataFormatError(f"line {lineno}: {exc}") from exc
        try:
            pt = GpsPoint(days * SECONDS_PER_DAY, lat, lon)
        except DataFormatError as exc:
            raise DataFormatError(f"line {lineno}: {exc}") from exc
        if points and pt.timestamp <= points[-1].timestamp:
            raise DataFormatError(f"line {lineno}: timestamps not strictly increasing")
        points.append(pt)
    return points


def write_geolife_plt(points: list[GpsPoint], stream: TextIO) -> None:
    from datetime import datetime, timedelta

    stream.write("Geolife trajectory\nWGS 84\nAltitude is in Feet\nReserved 3\n"
                 "0,2,255,My Track,0,0,2,8421376\n0\n")
    epoch = datetime(1899, 12, 30)
    for p in points:
        days = p.timestamp / SECONDS_PER_DAY
        stamp = epoch + timedelta(days=days)
        stream.write(f"{p.lat:.6f},{p.lon:.6f},0,0,{days:.10f},"
                     f"{stamp:%Y-%m-%d},{stamp:%H:%M:%S}\n")


def read_trajectory_csv(path) -> dict[str, list[GpsPoint]]:
    """CSV with header ``traj_id,timestamp,lat,lon``; rows grouped by id in file order."""
    trajs: dict[str, list[GpsPoint]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"traj_id", "timestamp", "lat", "lon"} - set(reader.fieldnames or [])
        if missing:
            raise DataFormatError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                pt = GpsPoint(float(row["timestamp"]), float(row["lat"]), float(row["lon"]))
            except (ValueError, DataFormatError) as exc:
                raise DataFormatError(f"{path} line {lineno}: {exc}") from exc
            pts = trajs.setdefault(row["traj_id"], [])
            if pts and pt.timestamp <= pts[-1].timestamp:
                raise DataFormatError(f"{path} line {lineno}: timestamps not strictly increasing")
            pts.append(pt)
    return trajs


def compute_velocities(points) -> np.ndarray:
    """Forward differences (vlat, vlon) in degrees/second; last point repeats the previous value."""
    arr = _as_point_array(points)
    if arr.shape[0] < 2:
        raise ValueError("need at least 2 points to compute velocities")
    dt = np.diff(arr[:, 0])
    if np.any(dt <= 0):
        raise ValueError("timestamps must be strictly increasing")
    v = np.diff(arr[:, 1:], axis=0) / dt[:, None]
    return np.vstack([v, v[-1:]])


def _as_point_array(points) -> np.ndarray:
    if len(points) and isinstance(points[0], GpsPoint):
        return np.array([[p.timestamp, p.lat, p.lon] for p in points], dtype=np.float64)
    return np.asarray(points, dtype=np.float64).reshape(-1, 3)


def _forward_velocity(pos: np.ndarray, dt: float) -> np.ndarray:
    v = np.diff(pos, axis=-1) / dt
    return np.concatenate([v, v[..., -1:]], axis=-1)


def segment_trip(points, velocities=None, n: int = SEGMENT_LENGTH, stride: int | None = None,
                 source: str = "", mode: int = -1) -> list[TripSegment]:
    """Windows [i, i+n) for i = 0, stride, ...; the trailing partial window is dropped."""
    stride = n if stride is None else stride
    if stride < 1:
        raise ValueError("stride must be >= 1")
    arr = _as_point_array(points)
    if arr.shape[0] < n:
        return []
    vel = compute_velocities(arr) if velocities is None else np.asarray(velocities, dtype=np.float64)
    full = np.vstack([arr[:, 1], arr[:, 2], vel[:, 0], vel[:, 1]])
    return [TripSegment(full[:, i:i + n].copy(), source, mode)
            for i in range(0, arr.shape[0] - n + 1, stride)]


def max_step_displacement(values: np.ndarray) -> np.ndarray:
    """Largest single-step lat/lon move (degrees) per segment."""
    steps = np.abs(np.diff(values[:, :2, :], axis=-1))
    return steps.max(axis=(1, 2))


def filter_gps_noise(segments: SegmentSet, threshold: float = 0.02) -> SegmentSet:
    return segments.subset(max_step_displacement(segments.values) <= threshold)


# ---------------------------------------------------------------------------
# normalization


@dataclass
class ChannelStats:
    mean: np.ndarray
    std: np.ndarray
    eps: float = 1e-12

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out = (x - self.mean[:, None]) / np.where(self.std > self.eps, self.std, 1.0)[:, None]
        out[..., self.std <= self.eps, :] = 0.0
        return out

    def invert(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return x * self.std[:, None] + self.mean[:, None]

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "eps": self.eps}

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelStats":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64),
                   float(d.get("eps", 1e-12)))


def normalize_segments(segments) -> tuple[np.ndarray, ChannelStats]:
    """Per-channel zero mean / unit variance over all segments and time steps.

    Channels with (near-)zero variance map to zero.  Reuse the returned stats
    via ``stats.apply`` for test data.
    """
    x = np.asarray(segments.values if isinstance(segments, SegmentSet) else segments, dtype=np.float64)
    if x.shape[0] == 0:
        raise ValueError("cannot normalize an empty segment set")
    mean = x.mean(axis=(0, 2))
    std = x.std(axis=(0, 2))
    stats = ChannelStats(mean, std)
    return stats.apply(x), stats


# ---------------------------------------------------------------------------
# synthetic trips


@dataclass
class SyntheticSpec:
    n_modes: int = 3
    n_segments: int = 1000
    segment_length: int = SEGMENT_LENGTH
    dt: float = 5.0
    anomaly_fraction: float = 0.0
    anomaly_types: tuple = ANOMALY_TYPES
    jitter: float = 2e-5
    gps_noise_scale: float = 0.02
    speeds: tuple = ()
    lane_spacing: float = 0.006
    route_length: float = 0.12
    center: tuple = (39.9, 116.4)
    waypoints: list = field(default_factory=list)
    template_seed: int = 0
    seed: int = 0

    def __post_init__(self):
        self.anomaly_types = tuple(self.anomaly_types)
        self.speeds = tuple(self.speeds)
        if self.n_modes < 1:
            raise ValueError("n_modes must be >= 1")
        if not 0 <= self.anomaly_fraction < 1:
            raise ValueError("anomaly_fraction must lie in [0, 1)")
        bad = set(self.anomaly_types) - set(ANOMALY_TYPES)
        if bad:
            raise ValueError(f"unknown anomaly types {sorted(bad)}")
        if self.anomaly_fraction > 0 and not self.anomaly_types:
            raise ValueError("anomaly_fraction > 0 needs at least one anomaly type")
        if self.gps_noise_scale < 50 * self.jitter:
            raise ValueError("gps_noise_scale must be at least 50x the jitter")
        if self.speeds and len(self.speeds) != self.n_modes:
            raise ValueError("need one speed per mode")
        if self.waypoints and len(self.waypoints) != self.n_modes:
            raise ValueError("need one waypoint list per mode")
        if self.segment_length < 4 or self.dt <= 0:
            raise ValueError("segment_length must be >= 4 and dt > 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["anomaly_types"] = list(self.anomaly_types)
        d["speeds"] = list(self.speeds)
        d["center"] = list(self.center)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown synthetic spec keys: {sorted(unknown)}")
        return cls(**d)

    def mode_speed(self, k: int) -> float:
        if self.speeds:
            return float(self.speeds[k])
        # deg/s; roughly 15-40 m/s spread across modes
        return float(np.linspace(1.4e-4, 3.4e-4, self.n_modes)[k]) if self.n_modes > 1 else 2.4e-4


class _Route:
    """Smooth curve through waypoints, addressable by arc length (degrees)."""

    def __init__(self, waypoints: np.ndarray):
        wp = np.asarray(waypoints, dtype=np.float64)
        chord = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(wp, axis=0), axis=1))])
        spline = CubicSpline(chord, wp, axis=0, bc_type="natural")
        t = np.linspace(0.0, chord[-1], 4000)
        dense = spline(t)
        self.s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(dense, axis=0), axis=1))])
        self.pts = dense
        self.length = float(self.s[-1])

    def at(self, s: np.ndarray) -> np.ndarray:
        return np.stack([np.interp(s, self.s, self.pts[:, 0]), np.interp(s, self.s, self.pts[:, 1])])


def mode_templates(spec: SyntheticSpec) -> list[np.ndarray]:
    """Waypoint lists per mode.

    By default the modes are roughly parallel roads: one shared gently curving
    backbone, offset laterally by ``lane_spacing`` per mode.  Lane order is
    (-1, +1, 0, -2, +2, ...) times the spacing so that mode 1's neighbours in
    space are modes 0 and 2.
    """
    if spec.waypoints:
        return [np.asarray(w, dtype=np.float64) for w in spec.waypoints]
    rng = np.random.default_rng([spec.template_seed, 99])
    n_wp = 7
    heading = rng.uniform(0, 2 * np.pi)
    leg = spec.route_length / (n_wp - 1)
    pts = [np.zeros(2)]
    for _ in range(n_wp - 1):
        heading += rng.uniform(-0.35, 0.35)
        pts.append(pts[-1] + leg * np.array([np.sin(heading), np.cos(heading)]))
    backbone = np.array(pts)
    backbone -= backbone.mean(axis=0)
    route = _Route(backbone)
    # unit normals at each waypoint from the smoothed curve
    s_wp = np.linspace(0, route.length, n_wp)
    ahead = route.at(np.clip(s_wp + 1e-3, 0, route.length)).T - route.at(np.clip(s_wp - 1e-3, 0, route.length)).T
    ahead /= np.linalg.norm(ahead, axis=1, keepdims=True)
    normal = np.stack([-ahead[:, 1], ahead[:, 0]], axis=1)
    base = route.at(s_wp).T
    lanes = []
    for k in range(spec.n_modes):
        if k == 0:
            lane = -1.0
        elif k == 1:
            lane = 1.0 if spec.n_modes == 2 else 0.0
        elif k == 2:
            lane = 1.0
        else:
            lane = (-1) ** k * (k // 2 + 1)
        lanes.append(lane)
    center = np.asarray(spec.center, dtype=np.float64)
    return [center + base + lane * spec.lane_spacing * normal for lane in lanes]


def _normal_segment(route: _Route, speed: float, spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    n = spec.segment_length
    t = np.arange(n) * spec.dt
    factor = rng.uniform(0.85, 1.15)
    phase = rng.uniform(0, 2 * np.pi)
    period = rng.uniform(0.6, 1.4) * n * spec.dt
    v = speed * factor * (1.0 + 0.15 * np.sin(2 * np.pi * t / period + phase))
    ds = np.concatenate([[0.0], np.cumsum(v[:-1] * spec.dt)])
    span = ds[-1]
    s0 = rng.uniform(0.0, max(route.length - span, 1e-9))
    pos = route.at(s0 + ds) + rng.normal(0.0, spec.jitter, size=(2, n))
    return pos


def _with_velocity(pos: np.ndarray, dt: float) -> np.ndarray:
    return np.vstack([pos, _forward_velocity(pos, dt)])


def _detour(pos: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = pos.shape[1]
    w = int(rng.integers(n // 3, n // 2 + 1))
    a = int(rng.integers(0, n - w + 1))
    chord = pos[:, -1] - pos[:, 0]
    length = np.linalg.norm(chord)
    direction = chord / max(length, 1e-12)
    normal = np.array([-direction[1], direction[0]])
    amp = rng.uniform(0.25, 0.5) * length * rng.choice([-1.0, 1.0])
    bump = np.sin(np.pi * np.arange(w) / (w - 1))
    out = pos.copy()
    out[:, a:a + w] += amp * normal[:, None] * bump[None, :]
    return out


def _speed_shift(pos: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = pos.shape[1]
    w = int(rng.integers(n // 3, n // 2 + 1))
    a = int(rng.integers(0, n - w))
    factor = rng.uniform(2.0, 4.0) if rng.random() < 0.5 else rng.uniform(0.25, 0.5)
    steps = np.diff(pos, axis=1)
    steps[:, a:a + w] *= factor
    return np.concatenate([pos[:, :1], pos[:, :1] + np.cumsum(steps, axis=1)], axis=1)


def _gps_noise(pos: np.ndarray, scale: float, rng: np.random.Generator) -> np.ndarray:
    n = pos.shape[1]
    k = max(1, n // 8)
    idx = rng.choice(n, size=k, replace=False)
    # miles-scale jumps in a random bearing; distance scale * U(2, 4)
    dist = scale * rng.uniform(2.0, 4.0, size=k)
    angle = rng.uniform(0.0, 2 * np.pi, size=k)
    out = pos.copy()
    out[:, idx] += dist * np.vstack([np.cos(angle), np.sin(angle)])
    return out


def generate_synthetic_trips(spec: SyntheticSpec) -> SegmentSet:
    """Labeled synthetic trip segments.

    Exactly ``round(anomaly_fraction * n_segments)`` segments are anomalous,
    with types assigned round-robin over ``spec.anomaly_types``.
    """
    rng = np.random.default_rng(spec.seed)
    routes = [_Route(w) for w in mode_templates(spec)]
    n = spec.n_segments
    modes = rng.integers(0, spec.n_modes, size=n)
    n_anom = int(round(spec.anomaly_fraction * n))
    anomalous = np.zeros(n, dtype=bool)
    anomalous[rng.choice(n, size=n_anom, replace=False)] = True
    kinds = ["normal"] * n
    for j, i in enumerate(np.flatnonzero(anomalous)):
        kinds[i] = spec.anomaly_types[j % len(spec.anomaly_types)]
    values = np.empty((n, 4, spec.segment_length))
    for i in range(n):
        pos = _normal_segment(routes[modes[i]], spec.mode_speed(modes[i]), spec, rng)
        if kinds[i] == "detour":
            pos = _detour(pos, rng)
        elif kinds[i] == "speed-shift":
            pos = _speed_shift(pos, rng)
        elif kinds[i] == "gps-noise":
            pos = _gps_noise(pos, spec.gps_noise_scale, rng)
        values[i] = _with_velocity(pos, spec.dt)
    return SegmentSet(values, modes, anomalous.astype(np.int64), kinds, [f"synthetic-{i}" for i in range(n)])


# ---------------------------------------------------------------------------
# MNIST IDX


def _open_maybe_gz(path):
    path = Path(path)
    data = path.read_bytes()
    return gzip.decompress(data) if data[:2] == b"\x1f\x8b" else data


def load_mnist_idx(image_file, label_file) -> tuple[np.ndarray, np.ndarray]:
    """Big-endian IDX images (magic 2051) and labels (magic 2049); pixels scaled to [0, 1]."""
    img = _open_maybe_gz(image_file)
    lab = _open_maybe_gz(label_file)
    if len(img) < 16 or len(lab) < 8:
        raise DataFormatError("truncated IDX header")
    magic, count, rows, cols = struct.unpack(">IIII", img[:16])
    if magic != 2051:
        raise DataFormatError(f"image file magic {magic} != 2051")
    lmagic, lcount = struct.unpack(">II", lab[:8])
    if lmagic != 2049:
        raise DataFormatError(f"label file magic {lmagic} != 2049")
    if count != lcount:
        raise DataFormatError(f"image count {count} != label count {lcount}")
    need = 16 + count * rows * cols
    if len(img) < need or len(lab) < 8 + count:
        raise DataFormatError("truncated IDX payload")
    images = np.frombuffer(img, dtype=np.uint8, count=count * rows * cols, offset=16)
    images = images.reshape(count, rows, cols).astype(np.float64) / 255.0
    labels = np.frombuffer(lab, dtype=np.uint8, count=count, offset=8).astype(np.int64)
    if labels.size and labels.max() > 9:
        raise DataFormatError("label byte outside 0..9")
    return images, labels


def write_mnist_idx(images, labels, image_file, label_file) -> None:
    images = np.asarray(images)
    if images.dtype != np.uint8:
        images = np.clip(np.rint(np.asarray(images, dtype=np.float64) * 255), 0, 255).astype(np.uint8)
    n, rows, cols = images.shape
    Path(image_file).write_bytes(struct.pack(">IIII", 2051, n, rows, cols) + images.tobytes())
    Path(label_file).write_bytes(struct.pack(">II", 2049, n) + np.asarray(labels, dtype=np.uint8).tobytes())


# ---------------------------------------------------------------------------
# splits


@dataclass
class DatasetSplit:
    train_idx: np.ndarray
    test_idx: np.ndarray
    test_labels: np.ndarray  # 1 = anomalous
    anomaly_class: int
    ratio: float


def make_holdout_split(labels, anomaly_class: int, ratio: float = 0.8, rng=0,
                       test_only=None) -> DatasetSplit:
    """Indices for a held-out-class split.

    Members of ``anomaly_class`` and any ``test_only`` rows go to test only;
    the rest is shuffled and split ``ratio`` / ``1 - ratio``.  Test labels mark
    the held-out class (and ``test_only`` rows) as 1.
    """
    labels = np.asarray(labels)
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    held = labels == anomaly_class
    if not held.any():
        raise ValueError(f"anomaly class {anomaly_class} does not occur in labels")
    extra = np.zeros(labels.size, dtype=bool) if test_only is None else np.asarray(test_only, dtype=bool)
    normal = np.flatnonzero(~held & ~extra)
    perm = rng.permutation(normal)
    n_train = int(round(ratio * normal.size))
    train = np.sort(perm[:n_train])
    test = np.concatenate([np.sort(perm[n_train:]), np.flatnonzero(held | extra)])
    test_labels = (held | extra)[test].astype(np.int64)
    return DatasetSplit(train, test, test_labels, int(anomaly_class), float(ratio))


# ---------------------------------------------------------------------------
# archives


def save_segment_archive(path, segments: SegmentSet, stats: ChannelStats | None = None) -> Path:
    """Segments in the IGGN tensor format plus a JSON label/statistics sidecar."""
    path = Path(path)
    tensors = {"values": segments.values, "mode": segments.mode.astype(np.float64),
               "anomaly": segments.anomaly.astype(np.float64)}
    extra = {"labels": {"kind": segments.kind, "source": segments.source},
             "channels": list(CHANNELS),
             "channel_stats": stats.to_dict() if stats is not None else None}
    return save_tensors(path, tensors, extra)


def load_segment_archive(path) -> tuple[SegmentSet, ChannelStats | None]:
    tensors = load_tensors(path)
    meta = json.loads(Path(str(path) + ".json").read_text())
    stats = ChannelStats.from_dict(meta["channel_stats"]) if meta.get("channel_stats") else None
    segs = SegmentSet(tensors["values"], tensors["mode"].astype(np.int64), tensors["anomaly"].astype(np.int64),
                      meta["labels"]["kind"], meta["labels"]["source"])
    return segs, stats


def segments_from_trajectories(trajs: dict[str, list[GpsPoint]], n: int = SEGMENT_LENGTH,
                               stride: int | None = None, labels: dict[str, int] | None = None) -> SegmentSet:
    segs: list[TripSegment] = []
    for tid, pts in trajs.items():
        if len(pts) < 2:
            continue
        mode = labels.get(tid, -1) if labels else -1
        segs.extend(segment_trip(pts, None, n, stride, source=tid, mode=mode))
    return SegmentSet.from_segments(segs)


def load_plt_dir(root, n: int = SEGMENT_LENGTH, stride: int | None = None) -> SegmentSet:
    """GeoLife layout ``<root>/<user>/Trajectory/*.plt``; the user id becomes the class label."""
    root = Path(root)
    segs: list[TripSegment] = []
    users = sorted(p for p in root.iterdir() if p.is_dir())
    for user in users:
        files = sorted(user.glob("**/*.plt"))
        for f in files:
            with f.open() as fh:
                try:
                    pts = parse_geolife_plt(fh)
                except DataFormatError as exc:
                    log.warning("skipping %s: %s", f, exc)
                    continue
            label = int(user.name) if user.name.isdigit() else users.index(user)
            segs.extend(segment_trip(pts, None, n, stride, source=f"{user.name}/{f.name}", mode=label))
    return SegmentSet.from_segments(segs)
