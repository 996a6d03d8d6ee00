"""Flat weight archive.

Layout (all integers little-endian)::

    b"MSOW" | u32 version | u32 count
    count x ( u32 name_len | name (UTF-8) | u32 ndim | ndim x u64 dims | f64 data, C order )

Records are written sorted by name. ``manifest.txt`` lists ``name<TAB>d0xd1...``
in the same order.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .tensor import Parameter

MAGIC = b"MSOW"
VERSION = 1


class ArchiveError(ValueError):
    pass


def _as_arrays(params) -> dict[str, np.ndarray]:
    if isinstance(params, Mapping):
        return {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
    arrays: dict[str, np.ndarray] = {}
    for p in params:
        if p.name in arrays:
            raise ArchiveError(f"duplicate parameter name {p.name!r}")
        arrays[p.name] = p.value
    return arrays


def save_weights(path, params: Iterable[Parameter] | Mapping[str, np.ndarray]) -> None:
    arrays = _as_arrays(params)
    chunks = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name in sorted(arrays):
        arr = arrays[name]
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_weights(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise ArchiveError(f"{path}: not a weight archive")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise ArchiveError(f"{path}: unsupported archive version {version}")
    pos = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        name = buf[pos:pos + n].decode("utf-8")
        pos += n
        (ndim,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
        pos += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        out[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * size
    if pos != len(buf):
        raise ArchiveError(f"{path}: {len(buf) - pos} trailing bytes")
    return out


def manifest_text(params: Iterable[Parameter] | Mapping[str, np.ndarray]) -> str:
    arrays = _as_arrays(params)
    lines = [f"{name}\t{'x'.join(str(s) for s in arrays[name].shape)}" for name in sorted(arrays)]
    return "\n".join(lines) + "\n"


def write_manifest(path, params) -> None:
    Path(path).write_text(manifest_text(params), encoding="utf-8")


def assign_weights(params: Iterable[Parameter], arrays: Mapping[str, np.ndarray]) -> None:
    """Copy archived arrays into ``params`` by name; every name must be present."""
    for p in params:
        if p.name not in arrays:
            raise ArchiveError(f"archive has no entry for {p.name!r}")
        arr = arrays[p.name]
        if arr.shape != p.value.shape:
            raise ArchiveError(f"{p.name}: archive shape {arr.shape} != model shape {p.value.shape}")
        p.value[...] = arr
