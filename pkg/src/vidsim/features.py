"""Regional descriptor pipeline.

Raw per-frame activation maps are max-pooled onto an NxN region grid
(level ``N``), L2-normalized per region before and after channel
concatenation, optionally PCA-whitened, and finally weighted by their
alignment with a learned unit context vector. Everything here is a pure
transformation; fitted whitening models and the context vector are
immutable and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .errors import RankDeficiencyError, ShapeMismatchError, SpatialExtentError

_NORM_EPS = 1e-12


@dataclass
class FeatureMapStack:
    """Per-layer activation maps of one frame, each H_k x W_k x C_k."""

    maps: list[np.ndarray]
    timestamp: float = 0.0

    def __post_init__(self):
        if len(self.maps) == 0:
            raise ShapeMismatchError("a feature stack needs at least one layer")
        clean = []
        for m in self.maps:
            arr = np.ascontiguousarray(m, dtype=np.float32)
            if arr.ndim != 3 or min(arr.shape) < 1:
                raise ShapeMismatchError(f"layer maps must be HxWxC with positive extents, got {arr.shape}")
            clean.append(arr)
        self.maps = clean

    @property
    def channels(self) -> int:
        return sum(m.shape[2] for m in self.maps)


@dataclass
class FrameDescriptor:
    """NxNxC attention-ready regional tensor of one frame."""

    regions: np.ndarray  # (N, N, C) float32
    level: int

    def __post_init__(self):
        self.regions = np.ascontiguousarray(self.regions, dtype=np.float32)
        if self.regions.ndim != 3 or self.regions.shape[0] != self.regions.shape[1]:
            raise ShapeMismatchError(f"descriptor must be NxNxC, got {self.regions.shape}")
        if self.regions.shape[0] != self.level:
            raise ShapeMismatchError(f"grid extent {self.regions.shape[0]} != level {self.level}")

    @property
    def channels(self) -> int:
        return self.regions.shape[2]

    def region_vectors(self) -> np.ndarray:
        """Flattened (N*N, C) view of the region grid."""
        n, _, c = self.regions.shape
        return self.regions.reshape(n * n, c)


@dataclass
class VideoTensor:
    """Ordered stack of frame descriptors sharing one grid and channel count."""

    video_id: str
    frames: np.ndarray  # (X, N, N, C) float32
    timestamps: np.ndarray = field(default=None)  # seconds; defaults to 1 fps indices

    def __post_init__(self):
        self.frames = np.ascontiguousarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 4 or self.frames.shape[1] != self.frames.shape[2]:
            raise ShapeMismatchError(f"video tensor must be XxNxNxC, got {self.frames.shape}")
        if self.frames.shape[0] < 1:
            raise ShapeMismatchError("a video needs at least one frame")
        if self.timestamps is None:
            self.timestamps = np.arange(self.frames.shape[0], dtype=np.float32)
        else:
            self.timestamps = np.asarray(self.timestamps, dtype=np.float32)
            if self.timestamps.shape != (self.frames.shape[0],):
                raise ShapeMismatchError("timestamps must have one entry per frame")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def level(self) -> int:
        return self.frames.shape[1]

    @property
    def channels(self) -> int:
        return self.frames.shape[3]

    def descriptor(self, index: int) -> FrameDescriptor:
        return FrameDescriptor(self.frames[index], self.level)

    def slice(self, start: int, stop: int, video_id: str | None = None) -> "VideoTensor":
        """Contiguous frame window keeping the original timestamps."""
        return VideoTensor(video_id or self.video_id,
                           self.frames[start:stop],
                           self.timestamps[start:stop])


@dataclass(frozen=True)
class WhiteningModel:
    """PCA whitening transform: center, project, scale by 1/sqrt(eigenvalue)."""

    mean: np.ndarray        # (C,) float32
    projection: np.ndarray  # (C, C') float32
    output_dim: int

    def transform(self, vectors: np.ndarray) -> np.ndarray:
        """Whiten (..., C) vectors without renormalization."""
        v = np.asarray(vectors, dtype=np.float64)
        if v.shape[-1] != self.mean.shape[0]:
            raise ShapeMismatchError(f"vectors have {v.shape[-1]} channels, model expects {self.mean.shape[0]}")
        out = (v - self.mean.astype(np.float64)) @ self.projection.astype(np.float64)
        return out.astype(np.float32)


def l2_normalize(vectors: np.ndarray, axis: int = -1) -> np.ndarray:
    """Unit-normalize along an axis; all-zero vectors stay zero."""
    v = np.asarray(vectors, dtype=np.float64)
    norm = np.sqrt((v * v).sum(axis=axis, keepdims=True))
    norm = np.where(norm < _NORM_EPS, 1.0, norm)
    return (v / norm).astype(np.float32)


def _cell_bounds(extent: int, level: int) -> list[tuple[int, int]]:
    # cell i spans [floor(i*H/N), floor((i+1)*H/N)); non-empty because extent >= level
    return [(extent * i // level, extent * (i + 1) // level) for i in range(level)]


def region_pool(stack: FeatureMapStack, level: int) -> FrameDescriptor:
    """Max-pool each layer onto an NxN grid and concatenate across layers.

    Region vectors are L2-normalized per layer before concatenation and
    again afterwards.
    """
    if level < 1:
        raise ValueError("level must be >= 1")
    pooled = []
    for k, m in enumerate(stack.maps):
        h, w, _ = m.shape
        if h < level or w < level:
            raise SpatialExtentError(f"layer {k} is {h}x{w}, smaller than the {level}x{level} grid")
        rows = _cell_bounds(h, level)
        cols = _cell_bounds(w, level)
        cells = np.empty((level, level, m.shape[2]), dtype=np.float32)
        for i, (r0, r1) in enumerate(rows):
            for j, (c0, c1) in enumerate(cols):
                cells[i, j] = m[r0:r1, c0:c1].max(axis=(0, 1))
        pooled.append(l2_normalize(cells))
    grid = np.concatenate(pooled, axis=2)
    return FrameDescriptor(l2_normalize(grid), level)


def pool_video(stacks: list[FeatureMapStack], level: int, video_id: str = "") -> VideoTensor:
    """Region-pool a sequence of stacks into one video tensor."""
    frames = np.stack([region_pool(s, level).regions for s in stacks])
    ts = np.array([s.timestamp for s in stacks], dtype=np.float32)
    return VideoTensor(video_id, frames, ts)


def fit_whitening(sample: np.ndarray, output_dim: int | None = None,
                  eigen_floor: float = 1e-8) -> WhiteningModel:
    """Fit a PCA whitening transform on (n, C) region vectors.

    Reduces to ``output_dim`` components when requested; otherwise raises
    when the covariance is rank-deficient (eigenvalue below the floor).
    """
    x = np.asarray(sample, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeMismatchError(f"whitening sample must be 2-D (n, C), got {x.shape}")
    n, c = x.shape
    target = output_dim if output_dim is not None else c
    if not 1 <= target <= c:
        raise ValueError(f"output_dim must be in [1, {c}]")
    if n <= target:
        raise ValueError(f"need more than {target} sample vectors, got {n}")
    mean = x.mean(axis=0)
    cov = np.cov(x, rowvar=False)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals, eigvecs = eigvals[order], eigvecs[:, order]
    if output_dim is None and eigvals[-1] < eigen_floor:
        raise RankDeficiencyError(
            f"covariance eigenvalue {eigvals[-1]:.3e} below {eigen_floor:.0e}; request a reduction instead")
    eigvals = np.maximum(eigvals[:target], eigen_floor)
    projection = eigvecs[:, :target] / np.sqrt(eigvals)
    return WhiteningModel(mean.astype(np.float32), projection.astype(np.float32), target)


def apply_whitening(desc: FrameDescriptor, model: WhiteningModel) -> FrameDescriptor:
    """Center, project, and L2-renormalize every region vector."""
    out = model.transform(desc.regions)
    return FrameDescriptor(l2_normalize(out), desc.level)


def whiten_video(video: VideoTensor, model: WhiteningModel) -> VideoTensor:
    frames = l2_normalize(model.transform(video.frames))
    return VideoTensor(video.video_id, frames, video.timestamps)


def check_context_vector(u: np.ndarray) -> np.ndarray:
    """Validate the context vector: 1-D and unit norm within 1e-4."""
    u = np.ascontiguousarray(u, dtype=np.float32)
    if u.ndim != 1:
        raise ShapeMismatchError(f"context vector must be 1-D, got shape {u.shape}")
    norm = float(np.linalg.norm(u.astype(np.float64)))
    if abs(norm - 1.0) > 1e-4:
        raise ValueError(f"context vector norm {norm:.6f} deviates from 1 by more than 1e-4")
    return u


def attend_tensor(frames: ag.Tensor, u: ag.Tensor) -> ag.Tensor:
    """Saliency-weight (X, R, C) region vectors against a unit context vector.

    Weight per region is (u . r)/2 + 0.5, applied without any cross-region
    normalization. Differentiable w.r.t. ``u`` when a tape is active.
    """
    alpha = ag.tensor_dot(frames, u, frames.ndim - 1, 0)        # (X, R)
    weights = ag.add_scalar(ag.mul_scalar(alpha, 0.5), 0.5)     # in [0, 1]
    weights = ag.reshape(weights, weights.shape + (1,))
    return ag.mul(frames, weights)


def attention_weight(desc: FrameDescriptor, u: np.ndarray) -> FrameDescriptor:
    """Apply the context-vector weighting to one frame descriptor."""
    u = check_context_vector(u)
    if u.shape[0] != desc.channels:
        raise ShapeMismatchError(f"context vector has {u.shape[0]} channels, descriptor has {desc.channels}")
    n = desc.level
    flat = ag.tensor(desc.region_vectors())
    out = attend_tensor(flat, ag.tensor(u))
    return FrameDescriptor(out.data.reshape(n, n, desc.channels), n)


def attend_video(video: VideoTensor, u: np.ndarray) -> VideoTensor:
    """Apply the context-vector weighting to every frame of a video."""
    u = check_context_vector(u)
    if u.shape[0] != video.channels:
        raise ShapeMismatchError(f"context vector has {u.shape[0]} channels, video has {video.channels}")
    x, n, _, c = video.frames.shape
    flat = ag.tensor(video.frames.reshape(x, n * n, c))
    out = attend_tensor(flat, ag.tensor(u))
    return VideoTensor(video.video_id, out.data.reshape(x, n, n, c), video.timestamps)


def sample_region_vectors(videos, rng: np.random.Generator, count: int) -> np.ndarray:
    """Uniformly sample region vectors across videos for whitening fits."""
    videos = list(videos)
    if not videos:
        raise ValueError("need at least one video to sample from")
    pool = np.concatenate([v.frames.reshape(-1, v.channels) for v in videos], axis=0)
    if count >= pool.shape[0]:
        return pool
    idx = rng.choice(pool.shape[0], size=count, replace=False)
    return pool[np.sort(idx)]
