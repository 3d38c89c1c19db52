"""VSLF writer, implemented against the documented byte layout.

This is deliberately a fresh implementation of the container format (see
docs/vslf.md in the engine repository): the adapter talks to the engine
only through the bytes on disk.

    magic "VSLF" | u32 version=1 | u32 frames X | u32 layers K
    K x (u32 H_k, u32 W_k, u32 C_k)
    payload: X * sum(H_k*W_k*C_k) float32 little-endian values,
             frame-major, layer-major, row-major
    trailer: 8-byte BLAKE2b digest of the payload
"""

from __future__ import annotations

import hashlib
import os
import struct

import numpy as np

MAGIC = b"VSLF"
VERSION = 1


def payload_hash(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=8).digest()


def write_vslf(path, frames: list[list[np.ndarray]]) -> None:
    """Write per-frame, per-layer activation maps.

    ``frames[i][k]`` is the H_k x W_k x C_k float map of layer k at frame i;
    every frame must carry the same layer shapes.
    """
    if not frames:
        raise ValueError("VSLF requires at least one frame")
    shapes = [np.asarray(m).shape for m in frames[0]]
    if not shapes or any(len(s) != 3 for s in shapes):
        raise ValueError("each layer map must be HxWxC")
    header = [MAGIC, struct.pack("<III", VERSION, len(frames), len(shapes))]
    for h, w, c in shapes:
        header.append(struct.pack("<III", h, w, c))
    chunks = []
    for i, frame in enumerate(frames):
        if [np.asarray(m).shape for m in frame] != shapes:
            raise ValueError(f"frame {i} layer shapes differ from frame 0")
        for m in frame:
            chunks.append(np.ascontiguousarray(m, dtype="<f4").tobytes())
    payload = b"".join(chunks)
    blob = b"".join(header) + payload + payload_hash(payload)
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)
