"""Flat binary tensor files ("IGGN") with a JSON manifest sidecar.

Layout, all little-endian::

    b"IGGN" | version u32 | count u32 |
    per tensor: name_len u16 | name utf-8 | rank u8 | dims u64 * rank | values f64 * prod(dims)

``<file>.json`` records shapes plus a sha256 of the binary file and of each tensor.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"IGGN"
FORMAT_VERSION = 1


class FormatError(ValueError):
    pass


class ChecksumError(FormatError):
    pass


class VersionError(FormatError):
    pass


def encode_tensors(tensors: dict[str, np.ndarray], version: int = FORMAT_VERSION) -> bytes:
    parts = [MAGIC, struct.pack("<II", version, len(tensors))]
    for name, value in tensors.items():
        arr = np.asarray(value, dtype="<f8")
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF or arr.ndim > 0xFF:
            raise FormatError(f"tensor {name!r} cannot be encoded")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes(order="C"))
    return b"".join(parts)


def decode_tensors(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise FormatError("bad magic bytes, not an IGGN tensor file")
    try:
        version, count = struct.unpack_from("<II", blob, 4)
    except struct.error as exc:
        raise FormatError("truncated header") from exc
    if version != FORMAT_VERSION:
        raise VersionError(f"tensor file version {version} is not supported (reader version {FORMAT_VERSION})")
    pos = 12
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", blob, pos)
            pos += 1
            dims = struct.unpack_from(f"<{rank}Q", blob, pos)
            pos += 8 * rank
            size = int(np.prod(dims)) if rank else 1
            nbytes = 8 * size
            if pos + nbytes > len(blob):
                raise FormatError(f"truncated data for tensor {name!r}")
            out[name] = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).reshape(dims).astype(np.float64)
            pos += nbytes
    except struct.error as exc:
        raise FormatError("truncated tensor record") from exc
    if pos != len(blob):
        raise FormatError("trailing bytes after last tensor")
    return out


def sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def save_tensors(path, tensors: dict[str, np.ndarray], extra: dict | None = None) -> Path:
    """Write ``path`` and its ``path.json`` manifest; returns the binary path."""
    path = Path(path)
    blob = encode_tensors(tensors)
    path.write_bytes(blob)
    manifest = {
        "format": "IGGN",
        "version": FORMAT_VERSION,
        "sha256": sha256(blob),
        "tensors": [
            {"name": k, "shape": list(np.shape(v)),
             "sha256": sha256(np.asarray(v, dtype="<f8").tobytes(order="C"))}
            for k, v in tensors.items()
        ],
    }
    if extra:
        manifest.update(extra)
    manifest_path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def load_tensors(path, verify: bool = True) -> dict[str, np.ndarray]:
    path = Path(path)
    blob = path.read_bytes()
    if verify:
        mpath = manifest_path(path)
        if not mpath.exists():
            raise FormatError(f"missing manifest {mpath}")
        manifest = json.loads(mpath.read_text())
        if manifest.get("sha256") != sha256(blob):
            raise ChecksumError(f"checksum mismatch for {path}")
    tensors = decode_tensors(blob)
    if verify:
        shapes = {t["name"]: tuple(t["shape"]) for t in manifest["tensors"]}
        for name, value in tensors.items():
            if shapes.get(name) != value.shape:
                raise FormatError(f"manifest shape mismatch for {name!r}")
    return tensors


def load_manifest(path) -> dict:
    return json.loads(manifest_path(path).read_text())
