"""Synthetic feature generators for tests, demos, and benchmarks.

Videos are sequences of "scenes": each scene is a fixed grid of unit
region vectors, and every frame showing that scene is a jittered,
renormalized copy. Copies of a video re-render the same scenes with fresh
jitter, so region similarities behave like real near-duplicates: high for
shared content, near the noise floor otherwise.

The retrieval fixture builds two splits. In the near-duplicate split the
positives replay the whole query with mild temporal edits. In the hard
split the positives keep only a contiguous part of the query (plus foreign
segments), while "collage" confusers flash most query scenes for a single
frame each in scrambled order; frame-level pooling alone cannot tell those
apart, but the temporal layout can.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import FeatureMapStack, VideoTensor, l2_normalize
from .training import Dataset, Interval, PoolEntry, SegmentAnnotation, TripletPool


def random_stack(rng: np.random.Generator, layer_shapes, timestamp: float = 0.0) -> FeatureMapStack:
    """One frame of positive random activations per layer shape."""
    maps = [rng.random(shape, dtype=np.float64).astype(np.float32) for shape in layer_shapes]
    return FeatureMapStack(maps, timestamp)


def random_stacks(rng: np.random.Generator, frames: int, layer_shapes) -> list[FeatureMapStack]:
    return [random_stack(rng, layer_shapes, float(i)) for i in range(frames)]


def random_video(rng: np.random.Generator, video_id: str, frames: int,
                 level: int, channels: int) -> VideoTensor:
    """Unit-normalized gaussian region vectors; norms are 1 up to rounding."""
    data = l2_normalize(rng.standard_normal((frames, level, level, channels)))
    return VideoTensor(video_id, data)


def one_hot_video(rng: np.random.Generator, video_id: str, frames: int,
                  level: int, channels: int) -> VideoTensor:
    """Region vectors that are exactly unit norm (single 1.0 per vector)."""
    hot = rng.integers(0, channels, size=(frames, level, level))
    data = np.zeros((frames, level, level, channels), dtype=np.float32)
    idx = np.indices(hot.shape)
    data[idx[0], idx[1], idx[2], hot] = 1.0
    return VideoTensor(video_id, data)


# ---------------------------------------------------------------------------
# scene-based corpora


def make_scene(rng: np.random.Generator, level: int, channels: int) -> np.ndarray:
    return l2_normalize(rng.standard_normal((level, level, channels)))


def render_scene(rng: np.random.Generator, scene: np.ndarray, frames: int,
                 jitter: float) -> np.ndarray:
    """Jittered unit-norm renders; ``jitter`` is the noise-to-signal norm ratio,
    so two renders of one scene have region cosine near 1/(1+jitter^2)."""
    noise = l2_normalize(rng.standard_normal((frames,) + scene.shape))
    return l2_normalize(scene[None] + jitter * noise)


def compose_video(rng: np.random.Generator, video_id: str, scenes, seg_len: int,
                  jitter: float) -> VideoTensor:
    frames = np.concatenate([render_scene(rng, s, seg_len, jitter) for s in scenes])
    return VideoTensor(video_id, frames)


KEPT_SCENES = 2     # contiguous query scenes a partial copy retains
FLASH_FRAMES = 2    # frames per flashed query scene in a collage confuser


def _partial_copy(rng, video_id, scenes, level, channels, seg_len, jitter,
                  kept: int = KEPT_SCENES) -> VideoTensor:
    """Contiguous run of query scenes embedded between foreign segments.

    Total length matches the source video, so frame-level pooling sees a
    strong but partial diagonal band.
    """
    start = int(rng.integers(0, len(scenes) - kept + 1))
    pieces = [render_scene(rng, make_scene(rng, level, channels), seg_len, jitter)]
    pieces += [render_scene(rng, s, seg_len, jitter) for s in scenes[start:start + kept]]
    remaining = (len(scenes) - kept - 1) * seg_len
    while remaining > 0:
        take = min(seg_len, remaining)
        pieces.append(render_scene(rng, make_scene(rng, level, channels), take, jitter))
        remaining -= take
    return VideoTensor(video_id, np.concatenate(pieces)), start


def _collage_confuser(rng, video_id, scenes, level, channels, seg_len, jitter) -> VideoTensor:
    """Most query scenes flash briefly, scrambled between foreign segments.

    Frame-level chamfer pooling rates these like (or above) a partial copy;
    only the temporal layout gives them away.
    """
    order = rng.permutation(len(scenes))[:len(scenes) - 1]
    pieces = []
    for s_idx in order:
        pieces.append(render_scene(rng, make_scene(rng, level, channels),
                                   seg_len - FLASH_FRAMES, jitter))
        pieces.append(render_scene(rng, scenes[s_idx], FLASH_FRAMES, jitter))
    pieces.append(render_scene(rng, make_scene(rng, level, channels), seg_len, jitter))
    return VideoTensor(video_id, np.concatenate(pieces))


@dataclass
class RetrievalFixture:
    """Synthetic corpus with a near-duplicate and a hard retrieval split."""

    corpus: dict[str, VideoTensor]
    easy_queries: dict[str, VideoTensor]
    hard_queries: dict[str, VideoTensor]
    easy_labels: dict[str, set[str]]
    hard_labels: dict[str, set[str]]

    @property
    def queries(self) -> dict[str, VideoTensor]:
        return {**self.easy_queries, **self.hard_queries}

    @property
    def labels(self) -> dict[str, set[str]]:
        return {**self.easy_labels, **self.hard_labels}


def make_retrieval_fixture(seed: int = 29, level: int = 2, channels: int = 32,
                           num_easy: int = 10, num_hard: int = 10,
                           corpus_size: int = 200, scenes_per_video: int = 5,
                           seg_len: int = 5, jitter: float = 0.35,
                           positives_per_query: int = 2,
                           confusers_per_query: int = 3) -> RetrievalFixture:
    """Deterministic corpus of scene videos with planted positives."""
    rng = np.random.default_rng(seed)
    corpus: dict[str, VideoTensor] = {}
    easy_queries, hard_queries = {}, {}
    easy_labels, hard_labels = {}, {}

    def foreign_scenes(count):
        return [make_scene(rng, level, channels) for _ in range(count)]

    for qi in range(num_easy):
        qid = f"easy-q{qi:02d}"
        scenes = foreign_scenes(scenes_per_video)
        easy_queries[qid] = compose_video(rng, qid, scenes, seg_len, jitter)
        positives = set()
        for ci in range(positives_per_query):
            vid = f"easy-q{qi:02d}-pos{ci}"
            copy = compose_video(rng, vid, scenes, seg_len, jitter)
            frames = copy.frames
            if ci % 2 == 0:  # pause-style: stretch one scene
                at = int(rng.integers(0, frames.shape[0]))
                frames = np.insert(frames, [at] * 2, frames[at], axis=0)
            else:  # light insertion of foreign content
                extra = render_scene(rng, make_scene(rng, level, channels), 2, jitter)
                at = int(rng.integers(0, frames.shape[0]))
                frames = np.insert(frames, [at] * 2, extra, axis=0)
            corpus[vid] = VideoTensor(vid, frames)
            positives.add(vid)
        easy_labels[qid] = positives

    for qi in range(num_hard):
        qid = f"hard-q{qi:02d}"
        scenes = foreign_scenes(scenes_per_video)
        hard_queries[qid] = compose_video(rng, qid, scenes, seg_len, jitter)
        positives = set()
        for ci in range(positives_per_query):
            vid = f"hard-q{qi:02d}-pos{ci}"
            corpus[vid], _ = _partial_copy(rng, vid, scenes, level, channels, seg_len, jitter)
            positives.add(vid)
        hard_labels[qid] = positives
        for ci in range(confusers_per_query):
            vid = f"hard-q{qi:02d}-conf{ci}"
            corpus[vid] = _collage_confuser(rng, vid, scenes, level, channels, seg_len, jitter)

    if len(corpus) > corpus_size:
        raise ValueError(f"planted videos ({len(corpus)}) already exceed corpus size {corpus_size}")
    di = 0
    while len(corpus) < corpus_size:
        vid = f"distractor{di:03d}"
        corpus[vid] = compose_video(rng, vid, foreign_scenes(scenes_per_video), seg_len, jitter)
        di += 1
    return RetrievalFixture(corpus, easy_queries, hard_queries, easy_labels, hard_labels)


def make_training_dataset(seed: int = 11, level: int = 2, channels: int = 32,
                          num_anchors: int = 10, extras: int = 16,
                          scenes_per_video: int = 5, seg_len: int = 5,
                          jitter: float = 0.35) -> Dataset:
    """Annotated training videos in the style of the hard retrieval split.

    Each anchor gets one partial copy. Annotations span both whole videos
    (loose, real-world style), so the pair's coarse segment similarity
    reflects the partial overlap and leaves headroom for hard-negative
    mining. Collage confusers and unrelated videos fill the candidate set.
    """
    rng = np.random.default_rng(seed)
    videos: dict[str, VideoTensor] = {}
    annotations: list[SegmentAnnotation] = []
    total = float(scenes_per_video * seg_len)
    for ai in range(num_anchors):
        aid, pid, cid = f"train-a{ai:02d}", f"train-p{ai:02d}", f"train-c{ai:02d}"
        scenes = [make_scene(rng, level, channels) for _ in range(scenes_per_video)]
        videos[aid] = compose_video(rng, aid, scenes, seg_len, jitter)
        videos[pid], _ = _partial_copy(rng, pid, scenes, level, channels, seg_len, jitter)
        annotations.append(SegmentAnnotation(aid, pid, Interval(0.0, total),
                                             Interval(0.0, total)))
        videos[cid] = _collage_confuser(rng, cid, scenes, level, channels, seg_len, jitter)
    for xi in range(extras):
        xid = f"train-x{xi:02d}"
        scenes = [make_scene(rng, level, channels) for _ in range(scenes_per_video)]
        videos[xid] = compose_video(rng, xid, scenes, seg_len, jitter)
    return Dataset(videos, annotations)


def make_overfit_pool(seed: int = 7, count: int = 10, level: int = 2,
                      channels: int = 32, scenes_per_video: int = 3,
                      seg_len: int = 4, jitter: float = 0.35) -> TripletPool:
    """Fixed triplets for the overfit smoke test.

    Videos are shorter than any reasonable snippet length, so the sampled
    snippets are always the whole videos and the triplets never change.
    """
    rng = np.random.default_rng(seed)
    pool = TripletPool("fixed")
    for ti in range(count):
        scenes = [make_scene(rng, level, channels) for _ in range(scenes_per_video)]
        anchor = compose_video(rng, f"fit-a{ti}", scenes, seg_len, jitter)
        positive = compose_video(rng, f"fit-p{ti}", scenes, seg_len, jitter)
        pieces = []
        for s_idx in rng.permutation(scenes_per_video):
            pieces.append(render_scene(rng, make_scene(rng, level, channels), seg_len - 1, jitter))
            pieces.append(render_scene(rng, scenes[s_idx], 1, jitter))
        negative = VideoTensor(f"fit-n{ti}", np.concatenate(pieces))
        pool.entries.append(PoolEntry(anchor, positive, [negative], 0.0))
    return pool
