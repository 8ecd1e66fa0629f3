"""Flat binary tensor checkpoints.

Layout: the magic ``GALN1`` followed by one record per tensor::

    u64 name_len | name (utf-8) | u64 rank | rank x u64 extents | f64 values

All integers and floats are little-endian. Records run to end of file.
"""
from __future__ import annotations

import os
import struct
from typing import Mapping

import numpy as np

from .autodiff import Tensor

MAGIC = b"GALN1"


class CheckpointError(ValueError):
    pass


def encode(tensors: Mapping[str, Tensor | np.ndarray]) -> bytes:
    chunks = [MAGIC]
    for name, t in tensors.items():
        arr = t.values if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<Q", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<Q", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(chunks)


def decode(data: bytes) -> dict[str, np.ndarray]:
    if not data.startswith(MAGIC):
        raise CheckpointError("not a GALN1 checkpoint (bad magic)")
    pos = len(MAGIC)
    out: dict[str, np.ndarray] = {}

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError("truncated checkpoint")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    while pos < len(data):
        (name_len,) = struct.unpack("<Q", take(8))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<Q", take(8))
        shape = struct.unpack(f"<{rank}Q", take(8 * rank))
        count = int(np.prod(shape)) if rank else 1
        values = np.frombuffer(take(8 * count), dtype="<f8").astype(np.float64)
        out[name] = values.reshape(shape)
    return out


def save_checkpoint(path: str | os.PathLike, tensors: Mapping[str, Tensor | np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(encode(tensors))


def load_checkpoint(path: str | os.PathLike) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return decode(fh.read())
