"""Retrieval ranking, average precision, and the runtime benchmark harness."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import NoRelevantItemsError
from .features import VideoTensor
from .model import ModelParams, VARIANT_VIDEO, score_pair
from .similarity import PoolingModes


@dataclass
class RetrievalRun:
    """Ranked results of one query: (video id, score) sorted descending."""

    query_id: str
    ranking: list[tuple[str, float]]
    relevant: set[str] = field(default_factory=set)

    def __post_init__(self):
        ids = [vid for vid, _ in self.ranking]
        if len(set(ids)) != len(ids):
            raise ValueError("ranking contains duplicate video ids")
        scores = [s for _, s in self.ranking]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValueError("ranking scores must be non-increasing")


def average_precision(run: RetrievalRun) -> float:
    """Mean over the ranks of relevant items of precision-at-that-rank.

    Ties were already broken by ascending video id when the run was built,
    so the value is deterministic.
    """
    if not run.relevant:
        raise NoRelevantItemsError(f"query {run.query_id} has no relevant items")
    hits = 0
    precisions = []
    for rank, (vid, _) in enumerate(run.ranking, start=1):
        if vid in run.relevant:
            hits += 1
            precisions.append(hits / rank)
    if not precisions:
        raise NoRelevantItemsError(f"no relevant item of query {run.query_id} appears in the ranking")
    return float(np.mean(precisions))


def rank_videos(query: VideoTensor, corpus: dict[str, VideoTensor], params: ModelParams,
                variant: str = VARIANT_VIDEO, modes: PoolingModes = PoolingModes(),
                relevant: set[str] | None = None, threads: int = 1) -> RetrievalRun:
    """Score every corpus video against the query and sort descending.

    Scoring may run on a thread pool; scores are assembled in corpus order
    before sorting, so the result does not depend on the thread count.
    """
    if not corpus:
        raise ValueError("corpus is empty")
    ids = sorted(corpus)

    def score_one(vid: str) -> float:
        return score_pair(query, corpus[vid], params, variant, modes).value

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            scores = list(pool.map(score_one, ids))
    else:
        scores = [score_one(vid) for vid in ids]
    order = sorted(zip(ids, scores), key=lambda item: (-item[1], item[0]))
    return RetrievalRun(query.video_id, order, relevant or set())


@dataclass
class EvalResult:
    mean_ap: float
    per_query: dict[str, float]


def evaluate(queries: dict[str, VideoTensor], corpus: dict[str, VideoTensor],
             labels: dict[str, set[str]], params: ModelParams,
             variant: str = VARIANT_VIDEO, modes: PoolingModes = PoolingModes(),
             threads: int = 1, csv_path=None) -> EvalResult:
    """Mean of per-query average precision, optionally dumped as CSV."""
    missing = set(queries) - set(labels)
    if missing:
        raise ValueError(f"labels missing for queries: {sorted(missing)}")
    per_query = {}
    for qid in sorted(queries):
        run = rank_videos(queries[qid], corpus, params, variant, modes,
                          relevant=labels[qid], threads=threads)
        per_query[qid] = average_precision(run)
    mean_ap = float(np.mean(list(per_query.values())))
    if csv_path is not None:
        lines = ["query_id,average_precision"]
        lines += [f"{qid},{ap:.6f}" for qid, ap in per_query.items()]
        lines.append(f"mean,{mean_ap:.6f}")
        with open(csv_path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    return EvalResult(mean_ap, per_query)


@dataclass
class BenchmarkRow:
    frames: int
    level: int
    offline_seconds: float  # feature extraction per video
    online_seconds: float   # pair scoring


@dataclass
class BenchmarkReport:
    rows: list[BenchmarkRow]
    growth_exponent: float  # fitted online-time exponent over the frame count

    def to_csv(self) -> str:
        lines = ["frames,level,offline_seconds,online_seconds"]
        lines += [f"{r.frames},{r.level},{r.offline_seconds:.6f},{r.online_seconds:.6f}"
                  for r in self.rows]
        lines.append(f"# online growth exponent over frames: {self.growth_exponent:.3f}")
        return "\n".join(lines) + "\n"


def benchmark(sizes: list[tuple[int, int]], params: ModelParams | None = None,
              channels: int = 32, repeats: int = 3, seed: int = 0,
              variant: str = VARIANT_VIDEO) -> BenchmarkReport:
    """Time the offline (feature) and online (scoring) stages over a grid.

    ``sizes`` lists (frames, level) points; the growth exponent is the
    log-log slope of the median online time against the frame count.
    """
    from .features import pool_video
    from .model import SimCnnParams
    from .synthetic import random_stacks, random_video

    if len(sizes) < 2:
        raise ValueError("need at least two grid points")
    if params is None:
        params = ModelParams(SimCnnParams.init(seed))
    rows = []
    for frames, level in sizes:
        rng = np.random.default_rng((seed, frames, level))
        stacks = random_stacks(rng, frames, [(level * 8, level * 8, channels)])
        offline = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            pool_video(stacks, level)
            offline.append(time.perf_counter() - t0)
        q = random_video(rng, f"bench-q-{frames}-{level}", frames, level, channels)
        p = random_video(rng, f"bench-p-{frames}-{level}", frames, level, channels)
        score_pair(q, p, params, variant)  # warm up
        online = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            score_pair(q, p, params, variant)
            online.append(time.perf_counter() - t0)
        # min is the usual noise-floor estimator under scheduler contention
        rows.append(BenchmarkRow(frames, level, float(min(offline)), float(min(online))))
    by_frames: dict[int, list[BenchmarkRow]] = {}
    for r in rows:
        by_frames.setdefault(r.level, []).append(r)
    # fit the exponent on the level with the most frame points
    series = max(by_frames.values(), key=len)
    xs = np.log([r.frames for r in series])
    ys = np.log([r.online_seconds for r in series])
    exponent = float(np.polyfit(xs, ys, 1)[0]) if len(series) >= 2 else float("nan")
    return BenchmarkReport(rows, exponent)
