"""Flat binary weight files shared by the encoder, denoiser, and decoder.

Layout: 4-byte magic, u32 tensor count, then per tensor a u32 rank, u32 dims,
and the row-major float32 payload. Tensor order is fixed by each model's
enumeration, so files are only portable across identical configs.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"DSW1"


def save_tensors(path, tensors) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(tensors)))
        for t in tensors:
            arr = np.ascontiguousarray(t, dtype=np.float32)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_tensors(path, expected_shapes) -> list[np.ndarray]:
    """Read tensors, validating count and per-tensor shapes against the model."""
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path}: not a weight file")
        (count,) = struct.unpack("<I", fh.read(4))
        if count != len(expected_shapes):
            raise ValueError(f"{path}: has {count} tensors, expected {len(expected_shapes)}")
        out = []
        for expect in expected_shapes:
            (rank,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{rank}I", fh.read(4 * rank))
            if shape != tuple(expect):
                raise ValueError(f"{path}: tensor shape {shape} != expected {tuple(expect)}")
            n = int(np.prod(shape))
            payload = fh.read(4 * n)
            if len(payload) != 4 * n:
                raise ValueError(f"{path}: truncated payload")
            out.append(np.frombuffer(payload, dtype=np.float32).reshape(shape).copy())
    return out
