"""KWT1 tensor container: the on-disk format for checkpoints and features.

Layout: magic bytes ``KWT1``, then per-tensor records of
name length (u32 LE), UTF-8 name, rank (u32 LE), dims (u64 LE each),
raw float64 LE data in row-major order.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"KWT1"


def write_tensors(path, tensors: dict[str, np.ndarray]):
    """Write tensors in dict iteration order (order is preserved on read)."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<Q", d))
            fh.write(arr.tobytes())


def read_tensors(path) -> dict[str, np.ndarray]:
    path = Path(path)
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: not a KWT1 container")
    tensors: dict[str, np.ndarray] = {}
    off = 4
    total = len(blob)
    while off < total:
        (nlen,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off:off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<I", blob, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}Q", blob, off)
        off += 8 * rank
        count = 1
        for d in dims:
            count *= d
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off).copy()
        off += 8 * count
        tensors[name] = arr.reshape(dims)
    return tensors
