"""Feature pipeline tests: region pooling, whitening, attention."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vidsim import features as ft
from vidsim.errors import RankDeficiencyError, ShapeMismatchError, SpatialExtentError


def region_pool_oracle(maps, level):
    """Per-cell brute-force max + normalize, independent of the kernel."""
    def norm(v):
        n = np.linalg.norm(v.astype(np.float64))
        return (v / n).astype(np.float32) if n > 1e-12 else v

    per_layer = []
    for m in maps:
        h, w, c = m.shape
        grid = np.zeros((level, level, c), np.float32)
        for i in range(level):
            for j in range(level):
                r0, r1 = h * i // level, h * (i + 1) // level
                c0, c1 = w * j // level, w * (j + 1) // level
                best = np.full(c, -np.inf, np.float32)
                for r in range(r0, r1):
                    for cc in range(c0, c1):
                        best = np.maximum(best, m[r, cc])
                grid[i, j] = norm(best)
        per_layer.append(grid)
    full = np.concatenate(per_layer, axis=2)
    out = np.zeros_like(full)
    for i in range(level):
        for j in range(level):
            out[i, j] = norm(full[i, j])
    return out


class TestRegionPool:
    def test_constant_map_gives_unit_diagonal_vector(self):
        stack = ft.FeatureMapStack([np.full((8, 8, 2), 3.5, np.float32)])
        desc = ft.region_pool(stack, 2)
        assert desc.regions.shape == (2, 2, 2)
        np.testing.assert_allclose(desc.regions, 0.7071, atol=1e-4)

    def test_level_one_equals_global_max_pool(self, rng):
        maps = [rng.random((7, 9, 3)).astype(np.float32),
                rng.random((5, 5, 2)).astype(np.float32)]
        stack = ft.FeatureMapStack(maps)
        desc = ft.region_pool(stack, 1)
        expect = []
        for m in maps:
            v = m.max(axis=(0, 1))
            expect.append(v / np.linalg.norm(v))
        full = np.concatenate(expect)
        full /= np.linalg.norm(full)
        np.testing.assert_allclose(desc.regions[0, 0], full, atol=1e-6)

    def test_matches_cell_enumeration_oracle(self):
        rng = np.random.default_rng(11)
        maps = [rng.standard_normal((6, 6, 2)).astype(np.float32),
                rng.standard_normal((6, 6, 3)).astype(np.float32)]
        desc = ft.region_pool(ft.FeatureMapStack(maps), 3)
        np.testing.assert_allclose(desc.regions, region_pool_oracle(maps, 3), atol=1e-6)

    def test_layer_smaller_than_grid_raises(self):
        stack = ft.FeatureMapStack([np.ones((2, 8, 1), np.float32)])
        with pytest.raises(SpatialExtentError):
            ft.region_pool(stack, 3)

    def test_invariant_to_within_cell_permutation(self, rng):
        m = rng.random((8, 8, 4)).astype(np.float32)
        desc1 = ft.region_pool(ft.FeatureMapStack([m]), 2)
        shuffled = m.copy()
        cell = shuffled[0:4, 0:4].reshape(16, 4)
        perm = rng.permutation(16)
        shuffled[0:4, 0:4] = cell[perm].reshape(4, 4, 4)
        desc2 = ft.region_pool(ft.FeatureMapStack([shuffled]), 2)
        np.testing.assert_array_equal(desc1.regions, desc2.regions)

    def test_all_region_vectors_unit_norm(self, rng):
        desc = ft.region_pool(ft.FeatureMapStack([rng.random((9, 7, 5)).astype(np.float32)]), 3)
        norms = np.linalg.norm(desc.region_vectors(), axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-5)

    def test_deterministic(self, rng):
        m = rng.random((8, 8, 4)).astype(np.float32)
        a = ft.region_pool(ft.FeatureMapStack([m]), 2).regions
        b = ft.region_pool(ft.FeatureMapStack([m.copy()]), 2).regions
        assert np.array_equal(a, b)


class TestWhitening:
    def test_correlated_gaussian_becomes_white(self):
        rng = np.random.default_rng(5)
        cov = np.array([[4.0, 1.0], [1.0, 1.0]])
        sample = rng.multivariate_normal([1.0, -2.0], cov, size=10_000)
        model = ft.fit_whitening(sample)
        out = model.transform(sample).astype(np.float64)
        emp = np.cov(out, rowvar=False)
        assert np.abs(emp - np.eye(2)).max() < 0.05

    def test_white_input_stays_white(self):
        rng = np.random.default_rng(6)
        sample = rng.standard_normal((8000, 4))
        model = ft.fit_whitening(sample)
        emp = np.cov(model.transform(sample).astype(np.float64), rowvar=False)
        assert np.abs(emp - np.eye(4)).max() < 0.05

    def test_reduction_retains_variance(self):
        rng = np.random.default_rng(7)
        basis = rng.standard_normal((2, 4))
        sample = rng.standard_normal((5000, 2)) @ basis + 1e-4 * rng.standard_normal((5000, 4))
        model = ft.fit_whitening(sample, output_dim=2)
        # eigenvalue-sum oracle on the raw covariance
        eigvals = np.sort(np.linalg.eigvalsh(np.cov(sample, rowvar=False)))[::-1]
        assert eigvals[:2].sum() / eigvals.sum() >= 0.99
        assert model.projection.shape == (4, 2)

    def test_rank_deficient_raises_without_reduction(self):
        rng = np.random.default_rng(8)
        basis = rng.standard_normal((2, 4))
        sample = rng.standard_normal((500, 2)) @ basis  # exactly rank 2
        with pytest.raises(RankDeficiencyError):
            ft.fit_whitening(sample)
        ft.fit_whitening(sample, output_dim=2)  # reduction is the way out

    def test_sample_size_guard(self):
        with pytest.raises(ValueError):
            ft.fit_whitening(np.eye(3, dtype=np.float32))

    def test_apply_identity_model_is_noop(self, rng):
        desc = ft.FrameDescriptor(ft.l2_normalize(rng.standard_normal((2, 2, 4))), 2)
        model = ft.WhiteningModel(np.zeros(4, np.float32), np.eye(4, dtype=np.float32), 4)
        out = ft.apply_whitening(desc, model)
        np.testing.assert_allclose(out.regions, desc.regions, atol=1e-6)

    def test_apply_renormalizes(self, rng):
        desc = ft.FrameDescriptor(ft.l2_normalize(rng.standard_normal((3, 3, 4))), 3)
        sample = rng.standard_normal((2000, 4)) * np.array([3.0, 1.0, 0.5, 0.2])
        model = ft.fit_whitening(sample)
        out = ft.apply_whitening(desc, model)
        norms = np.linalg.norm(out.region_vectors(), axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-5)

    def test_apply_matches_matrix_oracle(self, rng):
        desc = ft.FrameDescriptor(ft.l2_normalize(rng.standard_normal((2, 2, 3))), 2)
        sample = rng.standard_normal((1000, 3)) @ rng.standard_normal((3, 3))
        model = ft.fit_whitening(sample)
        out = ft.apply_whitening(desc, model)
        raw = (desc.regions.astype(np.float64) - model.mean.astype(np.float64)) \
            @ model.projection.astype(np.float64)
        raw /= np.linalg.norm(raw, axis=-1, keepdims=True)
        np.testing.assert_allclose(out.regions, raw, atol=1e-5)

    def test_dimension_mismatch(self, rng):
        desc = ft.FrameDescriptor(rng.standard_normal((2, 2, 5)).astype(np.float32), 2)
        model = ft.WhiteningModel(np.zeros(4, np.float32), np.eye(4, dtype=np.float32), 4)
        with pytest.raises(ShapeMismatchError):
            ft.apply_whitening(desc, model)


class TestAttention:
    def _unit_desc(self, rng, n=2, c=8):
        return ft.FrameDescriptor(ft.l2_normalize(rng.standard_normal((n, n, c))), n)

    def test_self_aligned_region_keeps_weight_one(self):
        u = np.zeros(4, np.float32)
        u[1] = 1.0
        regions = np.tile(u, (2, 2, 1))
        out = ft.attention_weight(ft.FrameDescriptor(regions, 2), u)
        np.testing.assert_allclose(out.regions, regions, atol=1e-6)

    def test_orthogonal_region_halved(self):
        u = np.array([1, 0, 0, 0], np.float32)
        r = np.array([0, 1, 0, 0], np.float32)
        out = ft.attention_weight(ft.FrameDescriptor(np.tile(r, (1, 1, 1)), 1), u)
        np.testing.assert_allclose(out.regions[0, 0], 0.5 * r, atol=1e-6)

    def test_anti_aligned_region_zeroed(self):
        u = np.array([1, 0, 0, 0], np.float32)
        out = ft.attention_weight(ft.FrameDescriptor(np.tile(-u, (1, 1, 1)), 1), u)
        np.testing.assert_allclose(out.regions[0, 0], 0.0, atol=1e-6)

    def test_non_unit_context_vector_rejected(self, rng):
        desc = self._unit_desc(rng)
        with pytest.raises(ValueError):
            ft.attention_weight(desc, np.full(8, 0.6, np.float32))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 16))
    def test_weights_in_unit_interval_and_direction_preserved(self, seed):
        rng = np.random.default_rng(seed)
        desc = self._unit_desc(rng)
        u = ft.l2_normalize(rng.standard_normal(8))
        out = ft.attention_weight(desc, u)
        before = desc.region_vectors().astype(np.float64)
        after = out.region_vectors().astype(np.float64)
        scale = np.linalg.norm(after, axis=1)  # weight, since inputs are unit
        assert np.all(scale <= 1.0 + 1e-6)
        for b, a, s in zip(before, after, scale):
            np.testing.assert_allclose(a, s * b, atol=1e-5)

    def test_zero_region_stays_zero(self):
        u = np.array([1, 0, 0, 0], np.float32)
        regions = np.zeros((1, 1, 4), np.float32)
        out = ft.attention_weight(ft.FrameDescriptor(regions, 1), u)
        np.testing.assert_array_equal(out.regions, 0.0)

    def test_video_and_frame_paths_agree(self, rng):
        video = ft.VideoTensor("v", ft.l2_normalize(rng.standard_normal((3, 2, 2, 8))))
        u = ft.l2_normalize(rng.standard_normal(8))
        whole = ft.attend_video(video, u)
        for i in range(3):
            per_frame = ft.attention_weight(video.descriptor(i), u)
            np.testing.assert_array_equal(whole.frames[i], per_frame.regions)

    def test_pipeline_determinism(self, rng):
        maps = [rng.random((8, 8, 3)).astype(np.float32)]
        u = ft.l2_normalize(rng.standard_normal(3))
        runs = []
        for _ in range(2):
            desc = ft.region_pool(ft.FeatureMapStack([maps[0].copy()]), 2)
            runs.append(ft.attention_weight(desc, u.copy()).regions)
        assert np.array_equal(runs[0], runs[1])
