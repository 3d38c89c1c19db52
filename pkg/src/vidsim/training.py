"""Triplet training of the context vector and the similarity CNN.

One triplet per optimization step: score the anchor against the positive
and the negative, take the hinge on the score gap, add the saturation
penalty on the raw CNN outputs of both branches, and push the gradients
through Adam. Snippets, transforms, and triplet choices are drawn from a
per-step RNG derived from (seed, step), so training is reproducible and a
run resumed from a checkpoint continues the exact same stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .errors import DivergenceError, EmptyPoolError, OverlapError, ShapeMismatchError
from .features import VideoTensor, l2_normalize
from .model import (
    ModelParams,
    SimCnnParams,
    VARIANT_VIDEO,
    cnn_tensors,
    pair_score_graph,
)
from .similarity import MP_AP, PoolingModes, SimilarityMatrix

MIN_OVERLAP_SECONDS = 5.0
HARD_NEGATIVE_CEILING = 0.5
ARTIFICIAL_NEGATIVE_FLOOR = 0.1

TEMPORAL = "temporal"
GEOMETRIC = "geometric"

ANNOTATED = "annotated"
ARTIFICIAL = "artificial"


@dataclass(frozen=True)
class Interval:
    """A [start, end) span in seconds."""

    start: float
    end: float

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError(f"interval must have start < end, got [{self.start}, {self.end})")

    @property
    def length(self) -> float:
        return self.end - self.start

    def overlap(self, other: "Interval") -> float:
        return max(0.0, min(self.end, other.end) - max(self.start, other.start))


@dataclass(frozen=True)
class TrainingConfig:
    margin: float = 0.5
    reg_weight: float = 0.1
    snippet_len: int = 64
    triplets_per_pool: int = 1000
    learning_rate: float = 1e-5
    epochs: int = 100
    seed: int = 0
    frame_mode: str = MP_AP
    video_mode: str = MP_AP

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError("margin must be > 0")
        if self.reg_weight < 0:
            raise ValueError("regularization weight must be >= 0")
        if self.snippet_len < 4:
            raise ValueError("snippet length must be >= 4 frames")
        if self.triplets_per_pool < 1:
            raise ValueError("triplets per pool must be >= 1")

    @property
    def modes(self) -> PoolingModes:
        return PoolingModes(self.frame_mode, self.video_mode)


@dataclass
class Triplet:
    """Anchor, positive, and negative videos plus the aligned overlap spans."""

    anchor: VideoTensor
    positive: VideoTensor
    negative: VideoTensor
    anchor_span: Interval | None = None
    positive_span: Interval | None = None

    def __post_init__(self):
        spans = (self.anchor_span, self.positive_span)
        if (spans[0] is None) != (spans[1] is None):
            raise ValueError("anchor and positive spans must be given together")
        if self.anchor_span is not None and self.anchor_span.length < MIN_OVERLAP_SECONDS:
            raise ValueError(f"annotated overlap must be >= {MIN_OVERLAP_SECONDS} seconds")


@dataclass
class PoolEntry:
    """A positive pair with its mined hard negatives."""

    anchor: VideoTensor
    positive: VideoTensor
    hard_negatives: list[VideoTensor]
    segment_sim: float
    anchor_span: Interval | None = None
    positive_span: Interval | None = None


@dataclass
class TripletPool:
    tag: str
    entries: list[PoolEntry] = field(default_factory=list)

    def trainable_entries(self) -> list[PoolEntry]:
        return [e for e in self.entries if e.hard_negatives]


# ---------------------------------------------------------------------------
# losses


def triplet_loss(sim_pos: float, sim_neg: float, margin: float) -> float:
    """Hinge on the negative/positive score gap."""
    return max(0.0, sim_neg - sim_pos + margin)


def regularization_loss(s_v_raw: SimilarityMatrix | np.ndarray) -> float:
    """Sum of how far raw CNN outputs fall outside the clip range [-1, 1]."""
    v = s_v_raw.values if isinstance(s_v_raw, SimilarityMatrix) else np.asarray(s_v_raw, dtype=np.float32)
    v = v.astype(np.float64)
    over = np.maximum(0.0, v - 1.0)
    under = np.minimum(0.0, v + 1.0)
    return float(np.float32((over + np.abs(under)).sum()))


def _reg_tensor(sv: ag.Tensor) -> ag.Tensor:
    over = ag.relu(ag.add_scalar(sv, -1.0))
    under = ag.relu(ag.mul_scalar(ag.add_scalar(sv, 1.0), -1.0))
    return ag.add(ag.reduce_sum(over), ag.reduce_sum(under))


@dataclass
class TotalLoss:
    loss: float
    triplet: float
    regularization: float
    grads: dict[str, np.ndarray]
    sim_pos: float
    sim_neg: float


def parameter_names() -> list[str]:
    names = []
    for i in range(4):
        names.append(f"conv{i + 1}.kernel")
        names.append(f"conv{i + 1}.bias")
    names.append("u")
    return names


def trainable_arrays(params: ModelParams) -> dict[str, np.ndarray]:
    """Mutable view of the trainable parameters, in fixed name order."""
    out: dict[str, np.ndarray] = {}
    for i in range(4):
        out[f"conv{i + 1}.kernel"] = params.cnn.kernels[i]
        out[f"conv{i + 1}.bias"] = params.cnn.biases[i]
    if params.u is not None:
        out["u"] = params.u
    return out


def total_loss(triplet: Triplet, params: ModelParams, config: TrainingConfig) -> TotalLoss:
    """Hinge plus weighted saturation penalty, with gradients for all
    trainable parameters (CNN kernels/biases and the context vector)."""
    with ag.GradTape() as tape:
        layers = cnn_tensors(params.cnn)
        u_t = ag.tensor(params.u) if params.u is not None else None
        watched: dict[str, ag.Tensor] = {}
        for i, (k, b) in enumerate(layers):
            watched[f"conv{i + 1}.kernel"] = k
            watched[f"conv{i + 1}.bias"] = b
        if u_t is not None:
            watched["u"] = u_t
        tape.watch(*watched.values())

        s_pos, raw_pos = pair_score_graph(triplet.anchor, triplet.positive, layers, u_t,
                                          VARIANT_VIDEO, config.modes)
        s_neg, raw_neg = pair_score_graph(triplet.anchor, triplet.negative, layers, u_t,
                                          VARIANT_VIDEO, config.modes)
        hinge = ag.relu(ag.add_scalar(ag.sub(s_neg, s_pos), config.margin))
        reg = ag.add(_reg_tensor(raw_pos), _reg_tensor(raw_neg))
        loss = ag.add(hinge, ag.mul_scalar(reg, config.reg_weight))
        adjoints = ag.backward(tape, loss)

    grads = {name: adjoints[t] for name, t in watched.items()}
    return TotalLoss(loss.item(), hinge.item(), reg.item(), grads, s_pos.item(), s_neg.item())


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def init(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(a) for k, a in params.items()},
                   {k: np.zeros_like(a) for k, a in params.items()}, 0)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """In-place Adam update; afterwards the context vector is re-projected
    to unit norm (skipped when it is already unit within 1e-7)."""
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads[name].astype(np.float64)
        if g.shape != p.shape:
            raise ShapeMismatchError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m = state.m[name].astype(np.float64)
        v = state.v[name].astype(np.float64)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        state.m[name] = m.astype(np.float32)
        state.v[name] = v.astype(np.float32)
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        p -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(np.float32)
    if "u" in params:
        u = params["u"]
        norm = float(np.linalg.norm(u.astype(np.float64)))
        if norm > 0 and abs(norm - 1.0) > 1e-7:
            u[...] = (u.astype(np.float64) / norm).astype(np.float32)


# ---------------------------------------------------------------------------
# snippets and feature-level transformations


def sample_snippet(video: VideoTensor, length: int,
                   constraint: Interval | None = None,
                   rng: np.random.Generator | None = None) -> VideoTensor:
    """Contiguous window of up to ``length`` frames.

    With a constraint interval, the window must keep at least five seconds
    of it (frame i covers [t_i, t_i + 1) at the 1 fps convention).
    """
    if length < 4:
        raise ValueError("snippet length must be >= 4 frames")
    rng = rng or np.random.default_rng()
    x = video.num_frames
    if x <= length:
        if constraint is not None:
            covered = Interval(video.timestamps[0], video.timestamps[-1] + 1.0).overlap(constraint)
            if covered < MIN_OVERLAP_SECONDS:
                raise OverlapError(
                    f"video covers only {covered:.1f}s of the required interval")
        return video.slice(0, x)
    if constraint is None:
        start = int(rng.integers(0, x - length + 1))
        return video.slice(start, start + length)
    # valid starts: window [t_s, t_s + length) keeps >= 5 s of the interval
    starts = []
    for s in range(0, x - length + 1):
        window = Interval(video.timestamps[s], video.timestamps[s + length - 1] + 1.0)
        if window.overlap(constraint) >= MIN_OVERLAP_SECONDS:
            starts.append(s)
    if not starts:
        raise OverlapError(
            f"no {length}-frame window keeps {MIN_OVERLAP_SECONDS:.0f}s of [{constraint.start}, {constraint.end})")
    start = starts[int(rng.integers(0, len(starts)))]
    return video.slice(start, start + length)


def _fresh(video_id: str, frames: np.ndarray) -> VideoTensor:
    return VideoTensor(video_id, frames)


def slow_motion(video: VideoTensor) -> VideoTensor:
    """Duplicate every frame (2x slow motion)."""
    return _fresh(video.video_id + "+slow", np.repeat(video.frames, 2, axis=0))


def fast_forward(video: VideoTensor) -> VideoTensor:
    """Keep every second frame."""
    return _fresh(video.video_id + "+fast", video.frames[::2])


def insert_frames(video: VideoTensor, rng: np.random.Generator) -> VideoTensor:
    """Splice random foreign frames (unit-norm noise regions) into the video."""
    x, n, _, c = video.frames.shape
    count = max(1, x // 4)
    foreign = l2_normalize(rng.standard_normal((count, n, n, c)))
    positions = np.sort(rng.integers(0, x + 1, size=count))
    frames = np.insert(video.frames, positions, foreign, axis=0)
    return _fresh(video.video_id + "+insert", frames)


def pause(video: VideoTensor, rng: np.random.Generator) -> VideoTensor:
    """Repeat one frame a few times, as if the video paused."""
    x = video.num_frames
    at = int(rng.integers(0, x))
    run = int(rng.integers(2, 6))
    frames = np.insert(video.frames, [at] * (run - 1), video.frames[at], axis=0)
    return _fresh(video.video_id + "+pause", frames)


def reverse(video: VideoTensor) -> VideoTensor:
    """Reverse the frame order; applying it twice restores the original."""
    return _fresh(video.video_id + "+rev", video.frames[::-1])


def flip_horizontal(video: VideoTensor) -> VideoTensor:
    """Mirror the region grid left-right; channels untouched."""
    return _fresh(video.video_id + "+hflip", video.frames[:, :, ::-1])


def flip_vertical(video: VideoTensor) -> VideoTensor:
    return _fresh(video.video_id + "+vflip", video.frames[:, ::-1, :])


def crop_grid(video: VideoTensor, rng: np.random.Generator) -> VideoTensor:
    """Keep a random contiguous (N-1)x(N-1) sub-grid of regions."""
    n = video.level
    if n == 1:
        return _fresh(video.video_id + "+crop", video.frames)
    k = n - 1
    r0 = int(rng.integers(0, n - k + 1))
    c0 = int(rng.integers(0, n - k + 1))
    return _fresh(video.video_id + "+crop", video.frames[:, r0:r0 + k, c0:c0 + k])


def rescale_grid(video: VideoTensor) -> VideoTensor:
    """Halve the region grid by 2x2 max pooling (ceil) and renormalize."""
    n = video.level
    if n == 1:
        return _fresh(video.video_id + "+scale", video.frames)
    m = -(-n // 2)
    padded = np.pad(video.frames, ((0, 0), (0, 2 * m - n), (0, 2 * m - n), (0, 0)),
                    constant_values=np.float32("-inf"))
    x, _, _, c = video.frames.shape
    win = padded.reshape(x, m, 2, m, 2, c).max(axis=(2, 4))
    return _fresh(video.video_id + "+scale", l2_normalize(win))


def transform_video(video: VideoTensor, kind: str, seed: int) -> VideoTensor:
    """One random transformation of the given kind, chosen by the seed."""
    rng = np.random.default_rng(seed)
    if kind == TEMPORAL:
        ops = [slow_motion, fast_forward, lambda v: insert_frames(v, rng),
               lambda v: pause(v, rng), reverse]
    elif kind == GEOMETRIC:
        ops = [flip_horizontal, flip_vertical, lambda v: crop_grid(v, rng), rescale_grid]
    else:
        raise ValueError(f"kind must be '{TEMPORAL}' or '{GEOMETRIC}', got {kind!r}")
    return ops[int(rng.integers(0, len(ops)))](video)


# ---------------------------------------------------------------------------
# coarse mining similarity and triplet pools


def global_descriptor(video: VideoTensor) -> np.ndarray:
    """One unit vector per video: mean over regions and frames, renormalized.

    Mean pooling (rather than max) keeps the proxy centered for unrelated
    content, so the mining thresholds on (0, 1] stay meaningful.
    """
    per_frame = l2_normalize(video.frames.astype(np.float64).mean(axis=(1, 2)))
    return l2_normalize(per_frame.astype(np.float64).mean(axis=0))


def coarse_similarity(a: VideoTensor, b: VideoTensor) -> float:
    """Cheap whole-video similarity used only for triplet mining."""
    return float(np.float32(global_descriptor(a).astype(np.float64) @ global_descriptor(b).astype(np.float64)))


def _clip_to_span(video: VideoTensor, span: Interval | None) -> VideoTensor:
    if span is None:
        return video
    ts = video.timestamps
    keep = (ts + 1.0 > span.start) & (ts < span.end)
    idx = np.nonzero(keep)[0]
    if idx.size == 0:
        return video
    return video.slice(int(idx[0]), int(idx[-1]) + 1)


@dataclass
class SegmentAnnotation:
    """Aligned segments of two videos showing the same content."""

    video_id: str
    peer_id: str
    interval: Interval
    peer_interval: Interval


@dataclass
class Dataset:
    """In-memory training dataset: videos plus segment annotations."""

    videos: dict[str, VideoTensor]
    annotations: list[SegmentAnnotation] = field(default_factory=list)


def build_pools(dataset: Dataset, coarse_sim=None, seed: int = 0,
                artificial_count: int | None = None) -> tuple[TripletPool, TripletPool]:
    """Construct the annotated and the artificial triplet pool.

    Pool 1 pairs videos with at least five seconds of annotated overlap;
    candidates whose coarse similarity to either segment exceeds the pair's
    segment similarity become hard negatives. Pool 2 pairs arbitrary videos
    with transformed copies of themselves; candidates above 0.1 coarse
    similarity become hard negatives. Candidates above 0.5 are excluded
    everywhere as potential near-duplicates.
    """
    sim = coarse_sim or coarse_similarity
    rng = np.random.default_rng(seed)
    ids = sorted(dataset.videos)

    annotated = TripletPool(ANNOTATED)
    for ann in dataset.annotations:
        if ann.interval.length < MIN_OVERLAP_SECONDS:
            continue
        if ann.video_id not in dataset.videos or ann.peer_id not in dataset.videos:
            continue
        anchor = dataset.videos[ann.video_id]
        positive = dataset.videos[ann.peer_id]
        seg_a = _clip_to_span(anchor, ann.interval)
        seg_p = _clip_to_span(positive, ann.peer_interval)
        s = sim(seg_a, seg_p)
        negatives = []
        for vid in ids:
            if vid in (ann.video_id, ann.peer_id):
                continue
            candidate = dataset.videos[vid]
            c = max(sim(candidate, seg_a), sim(candidate, seg_p))
            if c > HARD_NEGATIVE_CEILING:
                continue
            if c > s:
                negatives.append(candidate)
        annotated.entries.append(PoolEntry(anchor, positive, negatives, s,
                                           ann.interval, ann.peer_interval))

    artificial = TripletPool(ARTIFICIAL)
    pool2_ids = ids if artificial_count is None else list(
        rng.choice(ids, size=min(artificial_count, len(ids)), replace=False))
    for vid in pool2_ids:
        anchor = dataset.videos[vid]
        tseed = int(rng.integers(0, 2 ** 31))
        positive = transform_video(transform_video(anchor, GEOMETRIC, tseed), TEMPORAL, tseed + 1)
        positive = VideoTensor(vid + "+aug", positive.frames)
        negatives = []
        for other in ids:
            if other == vid:
                continue
            candidate = dataset.videos[other]
            c = sim(candidate, anchor)
            if ARTIFICIAL_NEGATIVE_FLOOR < c <= HARD_NEGATIVE_CEILING:
                negatives.append(candidate)
        artificial.entries.append(PoolEntry(anchor, positive, negatives, 0.0))
    if not annotated.entries and not artificial.entries:
        raise EmptyPoolError("no positive pair qualifies for either pool")
    return annotated, artificial


# ---------------------------------------------------------------------------
# the training loop


@dataclass
class TrainResult:
    params: ModelParams          # best-validation params, or the final ones
    history: list[tuple[int, float, float, float]]  # (step, L_tr, L_reg, L)
    best_map: float | None = None
    final_params: ModelParams | None = None  # last-step params, for resuming
    optimizer: AdamState | None = None


def _step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(step,)))


def _draw_triplet(pools: list[TripletPool], config: TrainingConfig, step: int) -> Triplet:
    rng = _step_rng(config.seed, step)
    pool = pools[step % len(pools)]
    entries = pool.trainable_entries()
    entry = entries[int(rng.integers(0, len(entries)))]
    negative = entry.hard_negatives[int(rng.integers(0, len(entry.hard_negatives)))]
    if entry.anchor_span is not None:
        anchor = sample_snippet(entry.anchor, config.snippet_len, entry.anchor_span, rng)
        kept = Interval(anchor.timestamps[0], anchor.timestamps[-1] + 1.0)
        shared = Interval(max(kept.start, entry.anchor_span.start),
                          min(kept.end, entry.anchor_span.end))
        offset = entry.positive_span.start - entry.anchor_span.start
        mapped = Interval(shared.start + offset, shared.end + offset)
        positive = sample_snippet(entry.positive, config.snippet_len, mapped, rng)
    else:
        anchor = sample_snippet(entry.anchor, config.snippet_len, None, rng)
        w = config.snippet_len
        if entry.positive.num_frames <= w:
            positive = entry.positive
        else:
            # transformed positives have warped timelines; keep the windows
            # roughly aligned by mapping the anchor start proportionally
            xa, xp = entry.anchor.num_frames, entry.positive.num_frames
            sa = float(anchor.timestamps[0] - entry.anchor.timestamps[0])
            frac = sa / max(1.0, xa - min(w, xa))
            sp = int(round(frac * (xp - w)))
            positive = entry.positive.slice(sp, sp + w)
    neg_snip = sample_snippet(negative, config.snippet_len, None, rng)
    return Triplet(anchor, positive, neg_snip,
                   entry.anchor_span, entry.positive_span)


def train(config: TrainingConfig,
          pools: tuple[TripletPool, TripletPool] | list[TripletPool],
          validation=None,
          initial: ModelParams | None = None,
          optimizer: AdamState | None = None,
          start_step: int = 0,
          checkpoint_hook=None) -> TrainResult:
    """Run triplet training and return the best (or final) parameters.

    ``validation``, when given, is a callable mapping ModelParams to a
    retrieval mAP; it runs at every epoch end and the best-scoring
    parameters are returned. ``checkpoint_hook(step, params, state)`` runs
    at every epoch end, enabling resumable checkpoints. Resuming a run
    means passing the saved params/optimizer and ``start_step``; the
    per-step RNG stream makes the continuation identical to an
    uninterrupted run.
    """
    usable = [p for p in pools if p.trainable_entries()]
    if not usable:
        raise EmptyPoolError("no pool entry has a hard negative to form triplets")
    params = initial.copy() if initial is not None else ModelParams(SimCnnParams.init(config.seed))
    arrays = trainable_arrays(params)
    state = optimizer if optimizer is not None else AdamState.init(arrays)
    steps_per_epoch = config.triplets_per_pool * len(usable)
    total_steps = config.epochs * steps_per_epoch

    history: list[tuple[int, float, float, float]] = []
    best_map: float | None = None
    best_params = params.copy()
    for step in range(start_step, total_steps):
        triplet = _draw_triplet(usable, config, step)
        result = total_loss(triplet, params, config)
        if not math.isfinite(result.loss):
            raise DivergenceError(f"loss became non-finite at step {step}")
        adam_step(arrays, result.grads, state, config.learning_rate)
        history.append((step, result.triplet, result.regularization, result.loss))
        at_epoch_end = (step + 1) % steps_per_epoch == 0
        if at_epoch_end:
            if validation is not None:
                current = validation(params)
                if best_map is None or current > best_map:
                    best_map = current
                    best_params = params.copy()
            if checkpoint_hook is not None:
                checkpoint_hook(step + 1, params, state)
    selected = best_params if validation is not None and best_map is not None else params
    return TrainResult(selected, history, best_map, params, state)
