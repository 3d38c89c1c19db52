"""Acceptance criteria for the primary component.

Each test covers one numbered criterion at its stated tolerance and prints
one pass/fail line (run with ``pytest -s tests/test_acceptance.py`` to see
them). The suite runs entirely on synthetic feature generators.
"""

import time
from contextlib import contextmanager

import numpy as np
import pytest

from vidsim import autograd as ag
from vidsim import evaluation as ev
from vidsim import model as mdl
from vidsim import similarity as sm
from vidsim import storage as st
from vidsim import training as tr
from vidsim.features import (
    VideoTensor,
    fit_whitening,
    l2_normalize,
    sample_region_vectors,
    whiten_video,
)
from vidsim.similarity import AP_AP, MP_AP, PoolingModes
from vidsim.synthetic import (
    make_overfit_pool,
    make_retrieval_fixture,
    make_training_dataset,
    one_hot_video,
    random_stacks,
    random_video,
)


@contextmanager
def criterion(number: int, description: str):
    try:
        yield
    except BaseException:
        print(f"[acceptance] criterion {number} ({description}): FAIL")
        raise
    print(f"[acceptance] criterion {number} ({description}): PASS")


# -- criterion 1 -------------------------------------------------------------


def test_criterion_1_cnn_shape_conformance():
    """CNN output is ceil(X/4) x ceil(Y/4) x 1 across [4, 128]^2, exactly."""
    with criterion(1, "similarity CNN shape conformance"):
        for x in range(4, 129):
            for y in range(4, 129):
                assert mdl.cnn_output_shape(x, y) == (-(-x // 4), -(-y // 4))
        # the arithmetic is exercised end-to-end on a sweep covering the
        # bounds and every residue mod 4 in both axes
        params = mdl.SimCnnParams.init(1)
        rng = np.random.default_rng(1)
        extents = [4, 5, 6, 7, 8, 17, 31, 62, 101, 128]
        for x in extents:
            for y in (4, 9, 30, 128):
                s = sm.SimilarityMatrix(rng.uniform(-1, 1, (x, y)).astype(np.float32))
                out = mdl.sim_cnn_forward(s, params)
                assert (out.rows, out.cols) == (-(-x // 4), -(-y // 4))


# -- criterion 2 -------------------------------------------------------------


def _chamfer_oracle(values):
    return float(np.mean([max(row) for row in values.tolist()]))


def _frame_cs_oracle(d, b, mode):
    dd = d.reshape(-1, d.shape[-1]).astype(np.float64)
    bb = b.reshape(-1, b.shape[-1]).astype(np.float64)
    sims = [[float(dd[i] @ bb[j]) for j in range(len(bb))] for i in range(len(dd))]
    if mode == AP_AP:
        return float(np.mean(sims))
    return float(np.mean([max(row) for row in sims]))


def test_criterion_2_equation_oracles():
    """Each similarity/loss formula matches a brute-force oracle, |delta| < 1e-5."""
    with criterion(2, "equation oracles on 100+ seeded instances"):
        rng = np.random.default_rng(2)
        for _ in range(100):
            s = rng.uniform(-1, 1, size=rng.integers(1, 9, size=2)).astype(np.float32)
            assert abs(sm.chamfer(s) - _chamfer_oracle(s)) < 1e-5
            sym = (_chamfer_oracle(s) + _chamfer_oracle(s.T)) / 2
            assert abs(sm.symmetric_chamfer(s) - sym) < 1e-5

        for _ in range(100):
            n_d, n_b = int(rng.integers(1, 4)), int(rng.integers(1, 4))
            c = int(rng.integers(2, 8))
            d = l2_normalize(rng.standard_normal((n_d, n_d, c)))
            b = l2_normalize(rng.standard_normal((n_b, n_b, c)))
            from vidsim.features import FrameDescriptor

            fd, fb = FrameDescriptor(d, n_d), FrameDescriptor(b, n_b)
            for mode in (MP_AP, AP_AP):
                got = sm.frame_cs(fd, fb, mode)
                assert abs(got - _frame_cs_oracle(d, b, mode)) < 1e-5

        for _ in range(100):
            x, y = int(rng.integers(1, 6)), int(rng.integers(1, 6))
            q = random_video(rng, "q", x, 2, 6)
            p = random_video(rng, "p", y, 2, 6)
            matrix = sm.video_pair_matrix(q, p).values
            for i in range(x):
                for j in range(y):
                    direct = sm.frame_cs(q.descriptor(i), p.descriptor(j))
                    assert abs(matrix[i, j] - direct) < 1e-5

        for _ in range(100):
            pos, neg, gamma = rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.05, 1)
            expected = max(0.0, neg - pos + gamma)
            assert abs(tr.triplet_loss(pos, neg, gamma) - expected) < 1e-5

        for _ in range(100):
            v = rng.uniform(-2, 2, size=(rng.integers(1, 6), rng.integers(1, 6)))
            v = v.astype(np.float32)
            expected = sum(max(0.0, float(e) - 1.0) + abs(min(0.0, float(e) + 1.0))
                           for e in v.ravel())
            assert abs(tr.regularization_loss(v) - expected) < 1e-5


# -- criterion 3 -------------------------------------------------------------


def test_criterion_3_gradient_suite():
    """Adjoints of the total loss match central differences at 50 generic points."""
    with criterion(3, "gradients vs finite differences, rel err < 1e-3"):
        rng = np.random.default_rng(3)
        cnn = mdl.SimCnnParams.init(3, scale=3.0)
        for b in cnn.biases:
            b += (rng.standard_normal(b.shape) * 0.1).astype(np.float32)
        params = mdl.ModelParams(cnn, l2_normalize(rng.standard_normal(32)))
        pool = make_overfit_pool(seed=7, count=2)
        entry = pool.entries[0]
        triplet = tr.Triplet(entry.anchor, entry.positive, entry.hard_negatives[0])
        config = tr.TrainingConfig(epochs=1, triplets_per_pool=1)

        analytic = tr.total_loss(triplet, params, config)
        base = tr.total_loss(triplet, params, config).loss
        names = sorted(analytic.grads)
        gen = np.random.default_rng(42)
        h = 2e-3
        checked = 0
        attempts = 0
        while checked < 50:
            attempts += 1
            assert attempts < 3000, "could not find enough generic points"
            name = names[int(gen.integers(0, len(names)))]
            g = analytic.grads[name]
            idx = np.unravel_index(int(gen.integers(0, g.size)), g.shape)
            if abs(g[idx]) < 0.05:  # below the float32 fd noise floor
                continue
            probe = mdl.ModelParams(params.cnn.copy(), params.u.copy())
            arr = tr.trainable_arrays(probe)[name]
            arr[idx] += h
            lp = tr.total_loss(triplet, probe, config).loss
            arr[idx] -= 2 * h
            lm = tr.total_loss(triplet, probe, config).loss
            fwd, bwd = (lp - base) / h, (base - lm) / h
            if abs(fwd - bwd) / max(abs(fwd), abs(bwd), 1e-9) > 3e-3:
                continue  # relu/max/clip kink inside the window: not generic
            fd = (lp - lm) / (2 * h)
            rel = abs(g[idx] - fd) / max(abs(g[idx]), abs(fd), 1e-12)
            assert rel < 1e-3, f"{name}{idx}: analytic {g[idx]:.6g} vs fd {fd:.6g}"
            checked += 1
        assert {n.split(".")[0] for n in names} == {"conv1", "conv2", "conv3", "conv4", "u"}


# -- criterion 4 -------------------------------------------------------------


def test_criterion_4_attention_contract():
    """Weights in [0, 1], direction preserved, alignment cases exact to 1e-6."""
    with criterion(4, "attention weighting contract"):
        from vidsim.features import FrameDescriptor, attention_weight

        rng = np.random.default_rng(4)
        for _ in range(200):
            desc = FrameDescriptor(l2_normalize(rng.standard_normal((2, 2, 8))), 2)
            u = l2_normalize(rng.standard_normal(8))
            out = attention_weight(desc, u)
            before = desc.region_vectors().astype(np.float64)
            after = out.region_vectors().astype(np.float64)
            weights = np.linalg.norm(after, axis=1) / np.linalg.norm(before, axis=1)
            assert np.all(weights >= -1e-6) and np.all(weights <= 1.0 + 1e-6)
            for b, a, w in zip(before, after, weights):
                assert np.linalg.norm(a - w * b) < 1e-5  # direction preserved

        u = np.zeros(8, np.float32)
        u[2] = 1.0
        aligned = FrameDescriptor(np.tile(u, (1, 1, 1)), 1)
        out = attention_weight(aligned, u)
        assert np.abs(out.regions - aligned.regions).max() < 1e-6

        ortho_vec = np.zeros(8, np.float32)
        ortho_vec[5] = 1.0
        ortho = FrameDescriptor(np.tile(ortho_vec, (1, 1, 1)), 1)
        out = attention_weight(ortho, u)
        assert np.abs(out.regions - 0.5 * ortho.regions).max() < 1e-6

        anti = FrameDescriptor(np.tile(-u, (1, 1, 1)), 1)
        out = attention_weight(anti, u)
        assert np.abs(out.regions).max() < 1e-6


# -- criterion 5 -------------------------------------------------------------


def test_criterion_5_overfit_smoke():
    """10 fixed triplets, lr 1e-3, <= 2000 steps: hinge < 0.05, penalty < 0.01."""
    with criterion(5, "overfit smoke test"):
        pool = make_overfit_pool(seed=7, count=10)
        rng = np.random.default_rng(0)
        initial = mdl.ModelParams(mdl.SimCnnParams.init(0), l2_normalize(rng.standard_normal(32)))
        config = tr.TrainingConfig(epochs=3, triplets_per_pool=200, seed=0,
                                   learning_rate=1e-3, reg_weight=0.1)
        result = tr.train(config, [pool], initial=initial)
        assert len(result.history) <= 2000

        hinges, penalties = [], []
        for entry in pool.entries:
            triplet = tr.Triplet(entry.anchor, entry.positive, entry.hard_negatives[0])
            loss = tr.total_loss(triplet, result.params, config)
            hinges.append(loss.triplet)
            penalties.append(loss.regularization)
        assert np.mean(hinges) < 0.05, f"mean triplet loss {np.mean(hinges):.4f}"
        assert np.mean(penalties) < 0.01, f"mean regularization loss {np.mean(penalties):.4f}"


# -- criterion 6 -------------------------------------------------------------


@pytest.fixture(scope="module")
def retrieval_fixture():
    return make_retrieval_fixture(seed=29)


def _train_variant(pools, modes: PoolingModes, u0, epochs=6, triplets=100) -> mdl.ModelParams:
    config = tr.TrainingConfig(epochs=epochs, triplets_per_pool=triplets, seed=0,
                               learning_rate=1e-3, frame_mode=modes.frame,
                               video_mode=modes.video)
    initial = mdl.ModelParams(mdl.SimCnnParams.init(0), u0)
    return tr.train(config, pools, initial=initial).params


def test_criterion_6_synthetic_retrieval_benchmark(retrieval_fixture):
    """200 videos, 20 queries: (a) frame-level near-duplicate mAP >= 0.95,
    (b) trained CNN variant >= frame variant on the hard split,
    (c) chamfer pooling >= average pooling on the hard split."""
    with criterion(6, "synthetic retrieval benchmark"):
        fix = retrieval_fixture
        assert len(fix.corpus) == 200 and len(fix.queries) == 20
        raw = mdl.ModelParams(mdl.SimCnnParams.init(0))

        # (a) near-duplicate split
        easy = ev.evaluate(fix.easy_queries, fix.corpus, fix.easy_labels, raw,
                           mdl.VARIANT_FRAME)
        assert easy.mean_ap >= 0.95, f"easy-split frame mAP {easy.mean_ap:.4f}"

        # (b) full trained pipeline (whitening + attention + CNN) on the hard split
        dataset = make_training_dataset(seed=11)
        sample = sample_region_vectors(dataset.videos.values(), np.random.default_rng(1), 20_000)
        whitening = fit_whitening(sample)
        white = {vid: whiten_video(v, whitening) for vid, v in dataset.videos.items()}
        pools = tr.build_pools(tr.Dataset(white, dataset.annotations), seed=0)
        u0 = l2_normalize(np.random.default_rng(0).standard_normal(32))
        trained = _train_variant(pools, PoolingModes(), u0)
        trained = mdl.ModelParams(trained.cnn, trained.u, whitening)

        corpus_w = {vid: whiten_video(v, whitening) for vid, v in fix.corpus.items()}
        hard_w = {qid: whiten_video(v, whitening) for qid, v in fix.hard_queries.items()}
        hard_v = ev.evaluate(hard_w, corpus_w, fix.hard_labels,
                             mdl.ModelParams(trained.cnn, trained.u), mdl.VARIANT_VIDEO)
        hard_f = ev.evaluate(fix.hard_queries, fix.corpus, fix.hard_labels, raw,
                             mdl.VARIANT_FRAME)
        print(f"    hard split: trained visil_v mAP {hard_v.mean_ap:.4f} "
              f"vs visil_f mAP {hard_f.mean_ap:.4f}")
        assert hard_v.mean_ap >= hard_f.mean_ap

        # (c) pooling combinations, each trained with its own modes
        pools_plain = tr.build_pools(dataset, seed=0)
        scores = {}
        for frame_mode in (MP_AP, AP_AP):
            for video_mode in (MP_AP, AP_AP):
                modes = PoolingModes(frame_mode, video_mode)
                combo = _train_variant(pools_plain, modes, u0)
                result = ev.evaluate(fix.hard_queries, fix.corpus, fix.hard_labels,
                                     combo, mdl.VARIANT_VIDEO, modes)
                scores[(frame_mode, video_mode)] = result.mean_ap
        print(f"    pooling combos on hard split: {scores}")
        best = scores[(MP_AP, MP_AP)]
        assert best >= scores[(AP_AP, AP_AP)]
        assert best >= scores[(MP_AP, AP_AP)]
        assert best >= scores[(AP_AP, MP_AP)]


# -- criterion 7 -------------------------------------------------------------


def test_criterion_7_complexity_trend():
    """Doubling the frame count multiplies online scoring time by 3x to 5x."""
    with criterion(7, "O(M^2) online scoring trend"):
        report = ev.benchmark([(64, 2), (128, 2), (256, 2)], repeats=9, seed=0)
        times = {row.frames: row.online_seconds for row in report.rows}
        r1 = times[128] / times[64]
        r2 = times[256] / times[128]
        print(f"    doubling ratios: {r1:.2f}, {r2:.2f}; exponent {report.growth_exponent:.2f}")
        assert 3.0 <= r1 <= 5.0
        assert 3.0 <= r2 <= 5.0
        for row in report.rows:
            assert row.offline_seconds > 0 and row.online_seconds > 0


# -- criterion 8 -------------------------------------------------------------


def test_criterion_8_determinism():
    """Fixed seed reproduces training and rankings bitwise; threads change nothing."""
    with criterion(8, "bitwise determinism"):
        pool = make_overfit_pool(seed=7, count=4)
        config = tr.TrainingConfig(epochs=1, triplets_per_pool=40, seed=5, learning_rate=1e-3)
        rng = np.random.default_rng(0)
        initial = mdl.ModelParams(mdl.SimCnnParams.init(0), l2_normalize(rng.standard_normal(32)))
        run_a = tr.train(config, [pool], initial=initial.copy())
        run_b = tr.train(config, [pool], initial=initial.copy())
        assert run_a.history == run_b.history
        for a, b in zip(run_a.params.cnn.kernels, run_b.params.cnn.kernels):
            assert a.tobytes() == b.tobytes()

        gen = np.random.default_rng(8)
        query = random_video(gen, "q", 8, 2, 32)
        corpus = {f"v{i}": random_video(gen, f"v{i}", 10, 2, 32) for i in range(12)}
        first = ev.rank_videos(query, corpus, run_a.params, mdl.VARIANT_VIDEO, threads=1)
        second = ev.rank_videos(query, corpus, run_a.params, mdl.VARIANT_VIDEO, threads=1)
        threaded = ev.rank_videos(query, corpus, run_a.params, mdl.VARIANT_VIDEO, threads=4)
        assert first.ranking == second.ranking == threaded.ranking


# -- criterion 9 -------------------------------------------------------------


def test_criterion_9_round_trips(tmp_path):
    """VSLF and checkpoints round-trip bit-exactly; resume matches straight-through."""
    with criterion(9, "bit-exact persistence and resume"):
        rng = np.random.default_rng(9)
        stacks = random_stacks(rng, 3, [(6, 7, 2), (3, 4, 5)])
        feature_path = tmp_path / "features.vslf"
        st.write_features(feature_path, stacks)
        loaded = st.read_features(feature_path)
        for a, b in zip(stacks, loaded):
            for ma, mb in zip(a.maps, b.maps):
                assert ma.tobytes() == mb.tobytes()

        pool = make_overfit_pool(seed=3, count=3)
        config = tr.TrainingConfig(epochs=4, triplets_per_pool=3, seed=6, learning_rate=1e-3)
        initial = mdl.ModelParams(mdl.SimCnnParams.init(8), l2_normalize(rng.standard_normal(32)))
        full = tr.train(config, [pool], initial=initial.copy())

        half_config = tr.TrainingConfig(epochs=2, triplets_per_pool=3, seed=6, learning_rate=1e-3)
        half = tr.train(half_config, [pool], initial=initial.copy())
        ckpt_path = tmp_path / "mid.bin"
        st.save_checkpoint(ckpt_path, st.Checkpoint(half.final_params, config,
                                                    half.optimizer, len(half.history)))
        # save -> load -> save must be byte-identical
        ckpt2_path = tmp_path / "mid2.bin"
        st.save_checkpoint(ckpt2_path, st.load_checkpoint(ckpt_path))
        assert ckpt_path.read_bytes() == ckpt2_path.read_bytes()

        resumed_ckpt = st.load_checkpoint(ckpt_path)
        resumed = tr.train(config, [pool], initial=resumed_ckpt.params,
                           optimizer=resumed_ckpt.optimizer, start_step=resumed_ckpt.step)
        assert half.history + resumed.history == full.history
        for a, b in zip(full.final_params.cnn.kernels, resumed.final_params.cnn.kernels):
            assert a.tobytes() == b.tobytes()
        assert full.final_params.u.tobytes() == resumed.final_params.u.tobytes()
