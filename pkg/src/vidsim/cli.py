"""Command-line surface: pool, train, rank, evaluate, simmatrix, benchmark.

Every subcommand is deterministic for a fixed seed, and multi-threaded
scoring produces the same numbers as a single thread. Errors print to
stderr with an ``error:`` prefix and exit nonzero; argparse usage problems
exit with its usual status 2.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .errors import VidsimError
from .evaluation import benchmark, evaluate, rank_videos
from .features import attend_video, fit_whitening, pool_video, sample_region_vectors, whiten_video
from .model import (
    ModelParams,
    SimCnnParams,
    VARIANTS,
    VARIANT_FRAME,
    VARIANT_SYM,
    VARIANT_VIDEO,
    pad_for_cnn,
    sim_cnn_forward,
)
from .similarity import AP_AP, MP_AP, PoolingModes, video_pair_matrix
from .storage import (
    Checkpoint,
    load_checkpoint,
    load_manifest,
    load_videos,
    read_features,
    read_video_tensor,
    save_checkpoint,
    write_history_csv,
    write_video_tensor,
)
from .training import AdamState, Dataset, TrainingConfig, build_pools, trainable_arrays, train

ENV_DATA_DIR = "VIDSIM_DATA_DIR"


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=1)


def _add_variant(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--variant", choices=VARIANTS, default=VARIANT_VIDEO)
    parser.add_argument("--f2f-mode", choices=[MP_AP, AP_AP], default=MP_AP)
    parser.add_argument("--v2v-mode", choices=[MP_AP, AP_AP], default=MP_AP)


def _modes(args) -> PoolingModes:
    if args.variant == VARIANT_SYM and (args.f2f_mode != MP_AP or args.v2v_mode != MP_AP):
        raise VidsimError("the symmetric variant only supports mp-ap pooling at both levels")
    return PoolingModes(args.f2f_mode, args.v2v_mode)


def _load_params(path: str | None, seed: int) -> ModelParams:
    if path is None:
        return ModelParams(SimCnnParams.init(seed))
    return load_checkpoint(path).params


def _write_pgm(path, values: np.ndarray) -> None:
    """8-bit PGM heatmap: value v in [-1, 1] maps to round((v + 1) * 127.5)."""
    v = np.clip(values.astype(np.float64), -1.0, 1.0)
    gray = np.rint((v + 1.0) * 127.5).astype(np.uint8)
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(gray.tobytes())


def _write_csv_matrix(path, values: np.ndarray) -> None:
    np.savetxt(path, values, fmt="%.7g", delimiter=",")


def cmd_pool(args) -> int:
    stacks = read_features(args.input)
    video = pool_video(stacks, args.level, video_id=os.path.basename(args.input))
    if args.whitening == "fit":
        rng = np.random.default_rng(args.seed)
        sample = sample_region_vectors([video], rng, args.whitening_sample)
        model = fit_whitening(sample, args.reduce_dims)
        video = whiten_video(video, model)
    elif args.whitening != "none":
        params = load_checkpoint(args.whitening).params
        if params.whitening is None:
            raise VidsimError(f"checkpoint {args.whitening} carries no whitening model")
        video = whiten_video(video, params.whitening)
    write_video_tensor(args.output, video)
    print(f"pooled {video.num_frames} frames at level {args.level} -> {args.output}")
    return 0


def cmd_train(args) -> int:
    manifest = load_manifest(args.manifest)
    videos = load_videos(manifest)
    annotations = [seg for rec in manifest.records for seg in rec.segments]
    dataset = Dataset(videos, annotations)
    config = TrainingConfig(
        margin=args.gamma, reg_weight=args.reg, snippet_len=args.snippet,
        triplets_per_pool=args.triplets, learning_rate=args.lr,
        epochs=args.epochs, seed=args.seed,
        frame_mode=args.f2f_mode, video_mode=args.v2v_mode)

    rng = np.random.default_rng(args.seed)
    whitening = None
    if args.whitening:
        sample = sample_region_vectors(videos.values(), rng, args.whitening_sample)
        whitening = fit_whitening(sample, args.reduce_dims)
        videos = {vid: whiten_video(v, whitening) for vid, v in videos.items()}
        dataset = Dataset(videos, annotations)
    channels = next(iter(videos.values())).channels
    u0 = np.zeros(channels, dtype=np.float32)
    u0[0] = 1.0
    initial = ModelParams(SimCnnParams.init(args.seed), u0, whitening)

    os.makedirs(args.output_dir, exist_ok=True)
    ckpt_path = os.path.join(args.output_dir, "checkpoint.bin")
    history_path = os.path.join(args.output_dir, "history.csv")
    if config.epochs == 0:
        save_checkpoint(ckpt_path, Checkpoint(initial, config, AdamState.init(trainable_arrays(initial)), 0))
        write_history_csv(history_path, [])
        print(f"wrote initial checkpoint -> {ckpt_path}")
        return 0

    pools = build_pools(dataset, seed=args.seed)

    def hook(step, params, state):
        save_checkpoint(ckpt_path, Checkpoint(params, config, state, step))

    result = train(config, pools, initial=initial, checkpoint_hook=hook)
    save_checkpoint(ckpt_path, Checkpoint(result.params, config,
                                          result.optimizer, len(result.history)))
    write_history_csv(history_path, result.history)
    final = result.history[-1] if result.history else None
    if final:
        print(f"trained {len(result.history)} steps; final loss {final[3]:.4f} -> {ckpt_path}")
    return 0


def _corpus_from_manifest(args):
    manifest = load_manifest(args.manifest)
    videos = load_videos(manifest)
    return manifest, videos


def cmd_rank(args) -> int:
    manifest, videos = _corpus_from_manifest(args)
    if args.query not in videos:
        raise VidsimError(f"query id {args.query!r} not in manifest")
    params = _load_params(args.checkpoint, args.seed)
    modes = _modes(args)
    query = videos[args.query]
    corpus = {vid: v for vid, v in videos.items() if vid != args.query or args.include_self}
    run = rank_videos(query, corpus, params, args.variant, modes, threads=args.threads)
    lines = ["rank,video_id,score"]
    lines += [f"{i},{vid},{score!r}" for i, (vid, score) in enumerate(run.ranking, start=1)]
    out = "\n".join(lines) + "\n"
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(out)
    else:
        sys.stdout.write(out)
    return 0


def cmd_evaluate(args) -> int:
    manifest, videos = _corpus_from_manifest(args)
    labels = {rec.video_id: set(rec.relevant) for rec in manifest.records if rec.relevant}
    if not labels:
        raise VidsimError("manifest declares no query records with relevance labels")
    queries = {qid: videos[qid] for qid in labels}
    corpus = {vid: v for vid, v in videos.items() if vid not in labels}
    params = _load_params(args.checkpoint, args.seed)
    modes = _modes(args)
    result = evaluate(queries, corpus, labels, params, args.variant, modes,
                      threads=args.threads, csv_path=args.output)
    print(f"mAP {result.mean_ap:.6f} over {len(queries)} queries")
    return 0


def cmd_simmatrix(args) -> int:
    a = read_video_tensor(args.video_a, os.path.basename(args.video_a))
    b = read_video_tensor(args.video_b, os.path.basename(args.video_b))
    params = load_checkpoint(args.checkpoint).params if args.checkpoint else None
    modes = _modes(args)
    if params is not None and params.u is not None:
        a, b = attend_video(a, params.u), attend_video(b, params.u)
    sf = video_pair_matrix(a, b, modes.frame, symmetric=(args.variant == VARIANT_SYM))
    os.makedirs(args.out_dir, exist_ok=True)
    _write_csv_matrix(os.path.join(args.out_dir, "s_f.csv"), sf.values)
    _write_pgm(os.path.join(args.out_dir, "s_f.pgm"), sf.values)
    wrote = ["s_f.csv", "s_f.pgm"]
    if params is not None and args.variant != VARIANT_FRAME:
        sv = sim_cnn_forward(pad_for_cnn(sf), params.cnn)
        _write_csv_matrix(os.path.join(args.out_dir, "s_v.csv"), sv.values)
        _write_pgm(os.path.join(args.out_dir, "s_v.pgm"), sv.values)
        wrote += ["s_v.csv", "s_v.pgm"]
    print(f"wrote {', '.join(wrote)} to {args.out_dir}")
    return 0


def cmd_benchmark(args) -> int:
    sizes = []
    for token in args.sizes.split(","):
        m, n = token.lower().split("x")
        sizes.append((int(m), int(n)))
    report = benchmark(sizes, repeats=args.repeats, seed=args.seed)
    csv = report.to_csv()
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(csv)
    sys.stdout.write(csv)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vidsim",
                                     description="fine-grained video similarity toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pool", help="region-pool raw activation stacks into descriptor files")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--level", type=int, required=True)
    p.add_argument("--whitening", default="none",
                   help="'none', 'fit', or a checkpoint path with a fitted model")
    p.add_argument("--whitening-sample", type=int, default=100_000)
    p.add_argument("--reduce-dims", type=int, default=None)
    _add_common(p)
    p.set_defaults(func=cmd_pool)

    p = sub.add_parser("train", help="build triplet pools from a manifest and train")
    p.add_argument("--manifest", required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--triplets", type=int, default=1000)
    p.add_argument("--gamma", type=float, default=0.5)
    p.add_argument("--reg", type=float, default=0.1)
    p.add_argument("--snippet", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-5)
    p.add_argument("--whitening", action="store_true")
    p.add_argument("--whitening-sample", type=int, default=100_000)
    p.add_argument("--reduce-dims", type=int, default=None)
    p.add_argument("--f2f-mode", choices=[MP_AP, AP_AP], default=MP_AP)
    p.add_argument("--v2v-mode", choices=[MP_AP, AP_AP], default=MP_AP)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rank", help="rank a corpus against one query")
    p.add_argument("--manifest", required=True)
    p.add_argument("--query", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--output", default=None)
    p.add_argument("--include-self", action="store_true",
                   help="keep the query video in the corpus")
    _add_variant(p)
    _add_common(p)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("evaluate", help="mAP over the manifest's labeled queries")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--output", default=None)
    _add_variant(p)
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("simmatrix", help="dump frame and network similarity matrices")
    p.add_argument("--video-a", required=True)
    p.add_argument("--video-b", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--out-dir", required=True)
    _add_variant(p)
    _add_common(p)
    p.set_defaults(func=cmd_simmatrix)

    p = sub.add_parser("benchmark", help="offline/online timing over a size grid")
    p.add_argument("--sizes", default="64x2,128x2,256x2",
                   help="comma-separated MxN grid points (frames x region level)")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--output", default=None)
    _add_common(p)
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except VidsimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
