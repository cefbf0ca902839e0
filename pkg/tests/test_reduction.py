"""Pooling and PCA tests against nested-loop and direct-SVD oracles."""

import numpy as np
import pytest

from oodkit.errors import NTooLarge, RankTooLow, ShapeMismatch, TooFewSamples, WindowTooLarge
from oodkit.reduction import (
    PcaModel,
    PoolSpec,
    avg_pool,
    load_pca,
    patch_mean_pool,
    pca_fit,
    pca_transform,
    save_pca,
)
from oracles import patch_mean_oracle, pool_oracle

PAPER_POOL_GRID = [(2, 1), (2, 2), (3, 1), (3, 2), (4, 1)]


class TestAvgPool:
    def test_constant_input(self):
        out = avg_pool(np.ones((4, 4)), PoolSpec(dims=2, kernel=2, stride=2))
        assert out.shape == (2, 2)
        np.testing.assert_array_equal(out, np.ones((2, 2)))

    def test_window_too_large(self):
        t = np.array([0.0, 2.0, 4.0, 6.0]).reshape(1, 1, 4)
        with pytest.raises(WindowTooLarge):
            avg_pool(t, PoolSpec(dims=2, kernel=2, stride=2))

    def test_rank_too_low(self):
        with pytest.raises(RankTooLow):
            avg_pool(np.ones((3, 3)), PoolSpec(dims=3, kernel=2, stride=1))

    def test_bottleneck_pool3d_shape_and_values(self):
        rng = np.random.default_rng(42)
        t = rng.standard_normal((768, 8, 4, 4))
        out = avg_pool(t, PoolSpec(dims=3, kernel=2, stride=2))
        assert out.shape == (768, 4, 2, 2)
        # spot-check a slice against the nested-loop oracle, exactly
        np.testing.assert_array_equal(out[:5], pool_oracle(t[:5], 3, 2, 2))

    @pytest.mark.parametrize("dims", [2, 3])
    @pytest.mark.parametrize("kernel,stride", PAPER_POOL_GRID)
    def test_matches_loop_oracle_exactly(self, dims, kernel, stride):
        rng = np.random.default_rng(dims * 100 + kernel * 10 + stride)
        for _ in range(10):
            lead = tuple(rng.integers(1, 4, size=rng.integers(0, 2)))
            spatial = tuple(rng.integers(kernel, kernel + 5, size=dims))
            t = rng.standard_normal(lead + spatial)
            got = avg_pool(t, PoolSpec(dims=dims, kernel=kernel, stride=stride))
            np.testing.assert_array_equal(got, pool_oracle(t, dims, kernel, stride))

    def test_constant_property_random_shapes(self):
        rng = np.random.default_rng(3)
        for kernel, stride in PAPER_POOL_GRID:
            value = float(rng.standard_normal())
            t = np.full((2, kernel + 3, kernel + 2), value)
            out = avg_pool(t, PoolSpec(dims=2, kernel=kernel, stride=stride))
            np.testing.assert_allclose(out, value, rtol=1e-12)


class TestPatchMeanPool:
    def test_small_example(self):
        t = np.array([[0.0, 2.0], [2.0, 4.0], [4.0, 6.0]])
        np.testing.assert_array_equal(patch_mean_pool(t), [2.0, 4.0])

    def test_bottleneck_shape(self):
        t = np.zeros((768, 8, 4, 4))
        assert patch_mean_pool(t).shape == (8, 4, 4)

    def test_matches_loop_oracle_exactly(self):
        rng = np.random.default_rng(11)
        t = rng.standard_normal((5, 3, 3))
        np.testing.assert_array_equal(patch_mean_pool(t), patch_mean_oracle(t))

    def test_scalar_multiplication_commutes(self):
        rng = np.random.default_rng(12)
        t = rng.standard_normal((6, 4, 2))
        for c in (-3.0, 0.5, 7.25):
            np.testing.assert_allclose(
                patch_mean_pool(c * t), c * patch_mean_pool(t), rtol=1e-12, atol=1e-15
            )

    def test_rank_too_low(self):
        with pytest.raises(RankTooLow):
            patch_mean_pool(np.ones(5))


def fit_on_rows(X, n):
    return pca_fit([row for row in X], n)


class TestPcaFit:
    def test_line_gives_aligned_component(self):
        pts = [np.array([0.0, 1.0]), np.array([1.0, 3.0]), np.array([2.0, 5.0])]
        model = pca_fit(pts, 1)
        direction = np.array([1.0, 1.0]) / np.sqrt(2.0)
        assert abs(abs(model.components[0] @ direction) - 1.0) < 1e-8

    def test_full_rank_reconstruction(self):
        rng = np.random.default_rng(21)
        X = rng.standard_normal((40, 8))
        model = fit_on_rows(X, 8)
        for row in X:
            scores = pca_transform(model, row)
            recon = (model.components.T @ scores) * np.where(
                model.feature_std == 0, 1.0, model.feature_std
            ) + model.feature_mean
            np.testing.assert_allclose(recon, row, atol=1e-6)

    def test_paper_component_grid(self):
        rng = np.random.default_rng(22)
        X = rng.standard_normal((300, 1024))
        rows = [row for row in X]
        for n in (2, 4, 8, 16, 32, 64, 128, 256):
            model = pca_fit(rows, n)
            assert model.components.shape == (n, 1024)

    def test_orthonormal_components(self):
        rng = np.random.default_rng(23)
        model = fit_on_rows(rng.standard_normal((30, 12)), 6)
        gram = model.components @ model.components.T
        np.testing.assert_allclose(gram, np.eye(6), atol=1e-8)

    def test_explained_variance_matches_score_variance(self):
        rng = np.random.default_rng(24)
        X = rng.standard_normal((50, 10)) * rng.uniform(0.5, 4.0, size=10)
        model = fit_on_rows(X, 5)
        scores = np.stack([pca_transform(model, row) for row in X])
        np.testing.assert_allclose(
            scores.var(axis=0, ddof=1), model.explained_variance, rtol=1e-6
        )
        assert np.all(np.diff(model.explained_variance) <= 0)

    def test_bitwise_determinism(self):
        rng = np.random.default_rng(25)
        X = rng.standard_normal((20, 7))
        m1 = fit_on_rows(X, 3)
        m2 = fit_on_rows(X, 3)
        for attr in ("feature_mean", "feature_std", "components", "explained_variance"):
            assert getattr(m1, attr).tobytes() == getattr(m2, attr).tobytes()

    def test_zero_variance_feature(self):
        rng = np.random.default_rng(26)
        X = rng.standard_normal((15, 4))
        X[:, 2] = 3.25  # constant feature
        model = fit_on_rows(X, 2)
        z = pca_transform(model, X[0])
        assert np.isfinite(z).all()
        # a constant feature contributes nothing to any component score
        shifted = X[0].copy()
        shifted[2] = -100.0
        np.testing.assert_allclose(pca_transform(model, shifted), z, atol=1e-12)

    def test_errors(self):
        rng = np.random.default_rng(27)
        with pytest.raises(TooFewSamples):
            pca_fit([np.ones(3)], 1)
        with pytest.raises(ShapeMismatch):
            pca_fit([np.ones(3), np.ones(4)], 1)
        with pytest.raises(NTooLarge):
            fit_on_rows(rng.standard_normal((5, 8)), 5)  # n > N-1
        with pytest.raises(NTooLarge):
            fit_on_rows(rng.standard_normal((10, 3)), 4)  # n > d


class TestPcaTransform:
    def test_mean_maps_to_zero(self):
        rng = np.random.default_rng(31)
        X = rng.standard_normal((25, 6))
        model = fit_on_rows(X, 4)
        np.testing.assert_allclose(
            pca_transform(model, model.feature_mean), 0.0, atol=1e-10
        )

    def test_matches_svd_scores(self):
        rng = np.random.default_rng(32)
        X = rng.standard_normal((20, 9))
        model = fit_on_rows(X, 4)
        # independent oracle: redo the standardization and SVD directly
        mean = X.mean(axis=0)
        std = X.std(axis=0)
        Z = (X - mean) / std
        U, S, Vt = np.linalg.svd(Z, full_matrices=False)
        signs = np.array([1.0 if v[np.argmax(np.abs(v))] >= 0 else -1.0 for v in Vt[:4]])
        oracle_scores = (U[:, :4] * S[:4]) * signs
        got = np.stack([pca_transform(model, row) for row in X])
        np.testing.assert_allclose(got, oracle_scores, atol=1e-8)

    def test_wrong_length(self):
        rng = np.random.default_rng(33)
        model = fit_on_rows(rng.standard_normal((10, 5)), 2)
        with pytest.raises(ShapeMismatch):
            pca_transform(model, np.ones(6))

    def test_save_load_round_trip(self, tmp_path):
        rng = np.random.default_rng(34)
        X = rng.standard_normal((12, 6))
        model = fit_on_rows(X, 3)
        save_pca(model, tmp_path / "pca")
        back = load_pca(tmp_path / "pca")
        assert isinstance(back, PcaModel)
        assert back.n_components == 3 and back.n_train == 12 and back.dim == 6
        for attr in ("feature_mean", "feature_std", "components", "explained_variance"):
            assert getattr(back, attr).tobytes() == getattr(model, attr).tobytes()
        x = rng.standard_normal(6)
        np.testing.assert_array_equal(pca_transform(back, x), pca_transform(model, x))
