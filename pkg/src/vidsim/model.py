"""The four-layer similarity CNN and end-to-end video pair scoring.

The CNN refines a frame-to-frame similarity matrix: three 3x3 conv+ReLU
stages with two 2x2/2 max pools in between, then a 1x1 projection to one
channel (no activation). Video similarity clips the raw output to [-1, 1]
and reduces it with the configured pooling (chamfer by default).

Three scoring variants exist: ``visil_f`` reduces the frame-level matrix
directly and bypasses the CNN, ``visil_v`` runs the CNN, and ``visil_sym``
uses the symmetric chamfer reduction at both the frame and video level.
The symmetric variant also bypasses the CNN: convolution does not commute
with matrix transposition, so an exactly symmetric score is only possible
on the frame-level matrix (whose transpose is the swapped-order matrix).

The same graph runs traced (for gradients) and untraced (for inference);
both paths produce bit-identical forward values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .errors import ShapeMismatchError, SpatialExtentError
from .features import VideoTensor, attend_tensor, attend_video, check_context_vector
from .similarity import (
    AP_AP,
    MP_AP,
    NETWORK_LEVEL,
    PoolingModes,
    SimilarityMatrix,
    video_pair_matrix,
)

VARIANT_FRAME = "visil_f"
VARIANT_SYM = "visil_sym"
VARIANT_VIDEO = "visil_v"
VARIANTS = (VARIANT_FRAME, VARIANT_SYM, VARIANT_VIDEO)

# (kernel_h, kernel_w, c_in, c_out) per conv layer
CNN_LAYOUT = ((3, 3, 1, 32), (3, 3, 32, 64), (3, 3, 64, 128), (1, 1, 128, 1))
MIN_CNN_INPUT = 4


@dataclass
class SimCnnParams:
    """Kernels and biases of the four conv layers, in layer order."""

    kernels: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.kernels) != len(CNN_LAYOUT) or len(self.biases) != len(CNN_LAYOUT):
            raise ShapeMismatchError(f"expected {len(CNN_LAYOUT)} conv layers")
        self.kernels = [np.ascontiguousarray(k, dtype=np.float32) for k in self.kernels]
        self.biases = [np.ascontiguousarray(b, dtype=np.float32) for b in self.biases]
        for i, (k, b, layout) in enumerate(zip(self.kernels, self.biases, CNN_LAYOUT)):
            if k.shape != layout:
                raise ShapeMismatchError(f"conv{i + 1} kernel shape {k.shape} != {layout}")
            if b.shape != (layout[3],):
                raise ShapeMismatchError(f"conv{i + 1} bias shape {b.shape} != ({layout[3]},)")

    @property
    def param_count(self) -> int:
        return sum(k.size for k in self.kernels) + sum(b.size for b in self.biases)

    @classmethod
    def init(cls, seed: int, scale: float = 1.0) -> "SimCnnParams":
        """Glorot-uniform kernels (scaled), zero biases."""
        rng = np.random.default_rng(seed)
        kernels, biases = [], []
        for kh, kw, cin, cout in CNN_LAYOUT:
            fan_in, fan_out = kh * kw * cin, kh * kw * cout
            limit = scale * np.sqrt(6.0 / (fan_in + fan_out))
            kernels.append(rng.uniform(-limit, limit, size=(kh, kw, cin, cout)).astype(np.float32))
            biases.append(np.zeros(cout, dtype=np.float32))
        return cls(kernels, biases)

    @classmethod
    def zeros(cls) -> "SimCnnParams":
        return cls([np.zeros(s, dtype=np.float32) for s in CNN_LAYOUT],
                   [np.zeros(s[3], dtype=np.float32) for s in CNN_LAYOUT])

    def copy(self) -> "SimCnnParams":
        return SimCnnParams([k.copy() for k in self.kernels], [b.copy() for b in self.biases])


@dataclass
class ModelParams:
    """Everything scoring needs: CNN weights, context vector, whitening."""

    cnn: SimCnnParams
    u: np.ndarray | None = None
    whitening: object | None = None

    def __post_init__(self):
        if self.u is not None:
            self.u = check_context_vector(self.u)

    def copy(self) -> "ModelParams":
        return ModelParams(self.cnn.copy(), None if self.u is None else self.u.copy(), self.whitening)


@dataclass(frozen=True)
class VideoScore:
    value: float
    variant: str


def _check_variant(variant: str) -> None:
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")


def cnn_output_shape(rows: int, cols: int) -> tuple[int, int]:
    """Spatial shape of the CNN output for an input similarity matrix."""
    r, c = rows, cols
    for i, (kh, kw, _, _) in enumerate(CNN_LAYOUT):
        r = ag.conv2d_output_extent(r, kh, 1, "same")
        c = ag.conv2d_output_extent(c, kw, 1, "same")
        if i in (0, 1):  # pools follow the first two convs
            r, c = ag.pool2d_output_extent(r), ag.pool2d_output_extent(c)
    return r, c


def cnn_tensors(params: SimCnnParams) -> list[tuple[ag.Tensor, ag.Tensor]]:
    """Fresh tensor wrappers over the CNN weights, one (kernel, bias) per layer."""
    return [(ag.tensor(k), ag.tensor(b)) for k, b in zip(params.kernels, params.biases)]


def sim_cnn_tensor(sf: ag.Tensor, layers: list[tuple[ag.Tensor, ag.Tensor]]) -> ag.Tensor:
    """Raw (pre-clip) CNN output for a 2-D similarity tensor."""
    rows, cols = sf.shape
    if rows < MIN_CNN_INPUT or cols < MIN_CNN_INPUT:
        raise SpatialExtentError(
            f"similarity matrix {rows}x{cols} smaller than {MIN_CNN_INPUT}x{MIN_CNN_INPUT}; pad it first")
    x = ag.reshape(sf, (rows, cols, 1))
    x = ag.max_pool2d(ag.relu(ag.conv2d(x, *layers[0])))
    x = ag.max_pool2d(ag.relu(ag.conv2d(x, *layers[1])))
    x = ag.relu(ag.conv2d(x, *layers[2]))
    x = ag.conv2d(x, *layers[3])
    return ag.reshape(x, x.shape[:2])


def sim_cnn_forward(s_f: SimilarityMatrix, params: SimCnnParams) -> SimilarityMatrix:
    """Run the similarity CNN on a frame-level matrix; output is raw S_v."""
    out = sim_cnn_tensor(ag.tensor(s_f.values), cnn_tensors(params))
    return SimilarityMatrix(out.data, NETWORK_LEVEL)


def pad_for_cnn(s_f: SimilarityMatrix) -> SimilarityMatrix:
    """Edge-replicate short-video matrices up to the CNN's minimum input."""
    if s_f.rows >= MIN_CNN_INPUT and s_f.cols >= MIN_CNN_INPUT:
        return s_f
    out = ag.pad_edge2d(ag.tensor(s_f.values), MIN_CNN_INPUT, MIN_CNN_INPUT)
    return SimilarityMatrix(out.data, s_f.kind)


def reduce_matrix_tensor(s: ag.Tensor, mode: str, symmetric: bool = False) -> ag.Tensor:
    """Video-level reduction of a 2-D score tensor to a scalar."""
    if mode == AP_AP:
        return ag.reduce_mean(s)
    fwd = ag.reduce_mean(ag.reduce_max(s, 1))
    if not symmetric:
        return fwd
    bwd = ag.reduce_mean(ag.reduce_max(s, 0))
    return ag.mul_scalar(ag.add(fwd, bwd), 0.5)


def video_score(s: SimilarityMatrix, variant: str, video_mode: str = MP_AP) -> VideoScore:
    """Collapse a similarity matrix to one score for the given variant.

    ``visil_v`` expects the raw CNN output and clips it to [-1, 1] first;
    ``visil_f`` and ``visil_sym`` expect the frame-level matrix.
    """
    _check_variant(variant)
    t = ag.tensor(s.values)
    if variant == VARIANT_VIDEO:
        t = ag.hard_tanh(t)
    out = reduce_matrix_tensor(t, video_mode, symmetric=(variant == VARIANT_SYM))
    return VideoScore(out.item(), variant)


def pair_matrix_tensor(qt: ag.Tensor, pt: ag.Tensor, mode: str = MP_AP,
                       symmetric: bool = False) -> ag.Tensor:
    """Traced frame-to-frame matrix from (X, R, C) and (Y, S, C) tensors."""
    sims = ag.tensor_dot(qt, pt, 2, 2)                # (X, R, Y, S)
    if mode == AP_AP:
        return ag.reduce_mean(sims, axis=(1, 3))
    fwd = ag.reduce_mean(ag.reduce_max(sims, 3), 1)
    if not symmetric:
        return fwd
    bwd = ag.reduce_mean(ag.reduce_max(sims, 1), 2)
    return ag.mul_scalar(ag.add(fwd, bwd), 0.5)


def pair_score_graph(q: VideoTensor, p: VideoTensor,
                     layers: list[tuple[ag.Tensor, ag.Tensor]],
                     u: ag.Tensor | None,
                     variant: str = VARIANT_VIDEO,
                     modes: PoolingModes = PoolingModes()) -> tuple[ag.Tensor, ag.Tensor | None]:
    """Build the full scoring graph; returns (score, raw S_v or None).

    Runs under the active gradient tape, so adjoints w.r.t. the CNN layer
    tensors and ``u`` are available from the returned score (or any loss
    derived from it).
    """
    _check_variant(variant)
    if q.channels != p.channels:
        raise ShapeMismatchError(f"channel mismatch: {q.channels} vs {p.channels}")
    symmetric = variant == VARIANT_SYM
    qt = ag.tensor(q.frames.reshape(q.num_frames, -1, q.channels))
    pt = ag.tensor(p.frames.reshape(p.num_frames, -1, p.channels))
    if u is not None:
        qt = attend_tensor(qt, u)
        pt = attend_tensor(pt, u)
    sf = pair_matrix_tensor(qt, pt, modes.frame, symmetric)
    if variant == VARIANT_FRAME:
        return reduce_matrix_tensor(sf, modes.video), None
    if variant == VARIANT_SYM:
        return reduce_matrix_tensor(sf, modes.video, symmetric=True), None
    sf = ag.pad_edge2d(sf, MIN_CNN_INPUT, MIN_CNN_INPUT)
    sv = sim_cnn_tensor(sf, layers)
    score = reduce_matrix_tensor(ag.hard_tanh(sv), modes.video)
    return score, sv


def score_pair(q: VideoTensor, p: VideoTensor, params: ModelParams,
               variant: str = VARIANT_VIDEO, modes: PoolingModes = PoolingModes(),
               block: int = 64) -> VideoScore:
    """End-to-end inference score: attention, pair matrix, CNN, reduction.

    Uses the blocked contraction kernel for the frame matrix; numerically
    identical to the traced graph used in training.
    """
    _check_variant(variant)
    qv = attend_video(q, params.u) if params.u is not None else q
    pv = attend_video(p, params.u) if params.u is not None else p
    sf = video_pair_matrix(qv, pv, modes.frame, symmetric=(variant == VARIANT_SYM), block=block)
    if variant in (VARIANT_FRAME, VARIANT_SYM):
        return video_score(sf, variant, modes.video)
    sv = sim_cnn_forward(pad_for_cnn(sf), params.cnn)
    return video_score(sv, variant, modes.video)
