"""Region-level frame similarity and the frame-to-frame similarity matrix.

Frame similarity is the chamfer reduction of the pairwise region dot
products: for each region of one frame, take the best match in the other
frame, then average ("mp-ap"). The alternative "ap-ap" reduction averages
all entries. The full XxY matrix between two videos is computed by one
blocked tensor contraction over the channel axis; blocking only tiles the
frame axes, so results are bit-identical to per-pair calls regardless of
block size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyMatrixError, ShapeMismatchError
from .features import FrameDescriptor, VideoTensor

MP_AP = "mp-ap"
AP_AP = "ap-ap"
_MODES = (MP_AP, AP_AP)

FRAME_LEVEL = "frame"
NETWORK_LEVEL = "network"


@dataclass
class SimilarityMatrix:
    """Dense 2-D score grid, frame-level (S_f) or network-output (S_v)."""

    values: np.ndarray
    kind: str = FRAME_LEVEL

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise ShapeMismatchError(f"similarity matrix must be 2-D, got shape {self.values.shape}")

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class PoolingModes:
    """Reduction choice per level: mp-ap (chamfer) or ap-ap (double average)."""

    frame: str = MP_AP
    video: str = MP_AP

    def __post_init__(self):
        for name, value in (("frame", self.frame), ("video", self.video)):
            if value not in _MODES:
                raise ValueError(f"{name} pooling mode must be one of {_MODES}, got {value!r}")


def _as_values(s) -> np.ndarray:
    values = s.values if isinstance(s, SimilarityMatrix) else np.asarray(s, dtype=np.float32)
    if values.ndim != 2:
        raise ShapeMismatchError(f"expected a 2-D similarity matrix, got shape {values.shape}")
    if values.size == 0:
        raise EmptyMatrixError("empty similarity matrix")
    return values


def chamfer(s) -> float:
    """Mean over rows of the row maximum. Not symmetric."""
    values = _as_values(s)
    return float(values.max(axis=1).astype(np.float64).mean().astype(np.float32))


def symmetric_chamfer(s) -> float:
    """Average of the chamfer reduction in both directions."""
    values = _as_values(s)
    fwd = np.float64(chamfer(values))
    bwd = np.float64(chamfer(values.T))
    return float(np.float32(np.float32(fwd + bwd) * np.float64(0.5)))


def _region_block(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise dot products of two region-vector sets, rounded to float32."""
    sims = np.tensordot(a.astype(np.float64), b.astype(np.float64), axes=([a.ndim - 1], [b.ndim - 1]))
    return sims.astype(np.float32)


def _reduce_tile(sims: np.ndarray, mode: str, symmetric: bool) -> np.ndarray:
    """Reduce an (x, R, y, S) region-similarity tile to an (x, y) block.

    Mirrors the traced op sequence exactly: max is exact on float32, means
    accumulate in float64 and round once per reduction.
    """
    if mode == AP_AP:
        return sims.astype(np.float64).mean(axis=(1, 3)).astype(np.float32)
    fwd = sims.max(axis=3).astype(np.float64).mean(axis=1).astype(np.float32)
    if not symmetric:
        return fwd
    bwd = sims.max(axis=1).astype(np.float64).mean(axis=2).astype(np.float32)
    both = fwd.astype(np.float64) + bwd.astype(np.float64)
    return (both.astype(np.float32).astype(np.float64) * 0.5).astype(np.float32)


def frame_cs(d: FrameDescriptor, b: FrameDescriptor, mode: str = MP_AP,
             symmetric: bool = False) -> float:
    """Similarity of two frames from their pairwise region dot products.

    Region grids may differ in size; channel counts must match.
    """
    if mode not in _MODES:
        raise ValueError(f"mode must be one of {_MODES}, got {mode!r}")
    if d.channels != b.channels:
        raise ShapeMismatchError(f"channel mismatch: {d.channels} vs {b.channels}")
    sims = _region_block(d.region_vectors(), b.region_vectors())
    tile = sims[None, :, None, :]
    return float(_reduce_tile(tile, mode, symmetric)[0, 0])


def region_similarity_matrix(d: FrameDescriptor, b: FrameDescriptor) -> np.ndarray:
    """The raw (N_d^2, N_b^2) matrix of region dot products."""
    if d.channels != b.channels:
        raise ShapeMismatchError(f"channel mismatch: {d.channels} vs {b.channels}")
    return _region_block(d.region_vectors(), b.region_vectors())


def video_pair_matrix(q: VideoTensor, p: VideoTensor, mode: str = MP_AP,
                      symmetric: bool = False, block: int = 64) -> SimilarityMatrix:
    """Frame-to-frame similarity matrix between two videos.

    One channel-axis tensor contraction per frame-block pair, followed by
    the per-pair reduction; numerically identical to calling
    :func:`frame_cs` on every frame pair.
    """
    if mode not in _MODES:
        raise ValueError(f"mode must be one of {_MODES}, got {mode!r}")
    if q.channels != p.channels:
        raise ShapeMismatchError(f"channel mismatch: {q.channels} vs {p.channels}")
    if q.num_frames == 0 or p.num_frames == 0:
        raise EmptyMatrixError("cannot compare an empty video")
    x, y = q.num_frames, p.num_frames
    qf = q.frames.reshape(x, -1, q.channels)
    pf = p.frames.reshape(y, -1, p.channels)
    out = np.empty((x, y), dtype=np.float32)
    for i0 in range(0, x, block):
        i1 = min(i0 + block, x)
        for j0 in range(0, y, block):
            j1 = min(j0 + block, y)
            sims = _region_block(qf[i0:i1], pf[j0:j1])          # (xb, R, yb, S)
            out[i0:i1, j0:j1] = _reduce_tile(sims, mode, symmetric)
    return SimilarityMatrix(out, FRAME_LEVEL)
