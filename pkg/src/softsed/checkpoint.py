"""Deterministic binary checkpoint container.

Layout: magic, format version, canonical JSON metadata, then named
float64 tensors sorted by name. No timestamps or other incidental
state, so identical contents produce identical bytes.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"SSCKPT"
FORMAT_VERSION = 1


def save_checkpoint(path, tensors: dict, meta: dict):
    """Write named float64 arrays plus JSON metadata."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta_blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<H", FORMAT_VERSION))
        fh.write(struct.pack("<I", len(meta_blob)))
        fh.write(meta_blob)
        fh.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            # asarray, not ascontiguousarray: the latter flattens 0-d to 1-d
            arr = np.asarray(tensors[name], dtype=np.float64)
            blob = name.encode()
            fh.write(struct.pack("<H", len(blob)))
            fh.write(blob)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path) -> tuple:
    """Read a container; returns (tensors, meta)."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    view = memoryview(blob)
    if len(blob) < len(MAGIC) + 2 or bytes(view[:len(MAGIC)]) != MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    pos = len(MAGIC)

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(blob):
            raise DataError(f"{path}: truncated checkpoint")
        values = struct.unpack_from(fmt, blob, pos)
        pos += size
        return values[0] if len(values) == 1 else values

    version = take("<H")
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    meta_len = take("<I")
    if pos + meta_len > len(blob):
        raise DataError(f"{path}: truncated metadata")
    try:
        meta = json.loads(bytes(view[pos:pos + meta_len]).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: corrupt metadata") from exc
    pos += meta_len

    tensors = {}
    n_tensors = take("<I")
    for _ in range(n_tensors):
        name_len = take("<H")
        name = bytes(view[pos:pos + name_len]).decode()
        pos += name_len
        ndim = take("<B")
        shape = tuple(take("<I") for _ in range(ndim)) if ndim else ()
        count = 1
        for dim in shape:
            count *= dim
        size = count * 8
        if pos + size > len(blob):
            raise DataError(f"{path}: truncated tensor '{name}'")
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=pos).reshape(shape)
        tensors[name] = arr.copy()
        pos += size
    if pos != len(blob):
        raise DataError(f"{path}: trailing bytes after payload")
    return tensors, meta
