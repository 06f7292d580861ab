"""Versioned binary container for named arrays (see docs/checkpoint_format.md)."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"RCACCKPT"
VERSION = 1

_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("u1")}
_CODES = {np.dtype("float32"): 0, np.dtype("uint8"): 1}


class CheckpointError(ValueError):
    pass


def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write ``arrays`` to ``path``. Float arrays are stored as little-endian float32."""
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(meta_bytes)))
        f.write(meta_bytes)
        f.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            arr = np.asarray(arr)
            if arr.dtype == np.uint8:
                code = 1
            else:
                code = 0
                arr = arr.astype("<f4")
            name_bytes = name.encode("utf-8")
            f.write(struct.pack("<H", len(name_bytes)))
            f.write(name_bytes)
            f.write(struct.pack("<BB", code, arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr).tobytes())
    tmp.replace(path)


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, meta_len = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    pos = 16
    meta = json.loads(data[pos:pos + meta_len].decode("utf-8"))
    pos += meta_len
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    arrays = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + name_len].decode("utf-8")
        pos += name_len
        code, ndim = struct.unpack_from("<BB", data, pos)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        dtype = _DTYPES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        arrays[name] = np.frombuffer(data, dtype, count=nbytes // dtype.itemsize,
                                     offset=pos).reshape(shape).copy()
        pos += nbytes
    if pos != len(data):
        raise CheckpointError(f"{path}: {len(data) - pos} trailing bytes")
    return arrays, meta
