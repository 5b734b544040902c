"""Tests for the shared numeric helpers."""

import numpy as np
import pytest

from conquant.errors import DataError, DimensionError
from conquant.numerics import (
    ensure_finite,
    inner,
    make_rng,
    pairwise_sq_l2,
    squared_l2,
    svd_square,
)


class TestRng:
    def test_same_seed_same_draws(self):
        a = make_rng(7).standard_normal(16)
        b = make_rng(7).standard_normal(16)
        np.testing.assert_array_equal(a, b)

    def test_streams_independent(self):
        a = make_rng(7, 0).standard_normal(16)
        b = make_rng(7, 1).standard_normal(16)
        assert not np.array_equal(a, b)

    def test_different_seeds_differ(self):
        a = make_rng(1).standard_normal(8)
        b = make_rng(2).standard_normal(8)
        assert not np.array_equal(a, b)


class TestScalars:
    def test_inner_oracle(self):
        assert inner(np.array([1.0, 0.0, 0.0, 1.0]), np.array([0.0, 1.0, 2.0, 2.0])) == 2.0

    def test_inner_float64_accumulation(self):
        a = np.full(1000, 0.1, dtype=np.float32)
        b = np.ones(1000, dtype=np.float32)
        assert inner(a, b) == pytest.approx(100.0, rel=1e-5)

    def test_inner_shape_mismatch(self):
        with pytest.raises(DimensionError):
            inner(np.ones(3), np.ones(4))

    def test_squared_l2_oracle(self):
        assert squared_l2(np.array([1.0, 2.0]), np.array([4.0, 6.0])) == 25.0

    def test_squared_l2_zero(self):
        v = np.array([0.3, -0.7, 1.1])
        assert squared_l2(v, v) == 0.0


class TestPairwise:
    def test_matches_naive_loop(self):
        rng = np.random.default_rng(5)
        points = rng.standard_normal((7, 4))
        centers = rng.standard_normal((3, 4))
        got = pairwise_sq_l2(points, centers)
        want = np.empty((7, 3))
        for i in range(7):
            for j in range(3):
                want[i, j] = squared_l2(points[i], centers[j])
        np.testing.assert_allclose(got, want, atol=1e-10)

    def test_nonnegative(self):
        rng = np.random.default_rng(9)
        points = rng.standard_normal((50, 8)) * 1e-4
        got = pairwise_sq_l2(points, points)
        assert np.all(got >= 0.0)


class TestChecks:
    def test_ensure_finite_passes_clean(self):
        arr = np.array([1.0, 2.0])
        assert ensure_finite(arr, "x") is arr

    def test_ensure_finite_rejects_nan_and_inf(self):
        with pytest.raises(DataError):
            ensure_finite(np.array([1.0, np.nan]), "x")
        with pytest.raises(DataError):
            ensure_finite(np.array([np.inf, 1.0]), "x")


class TestSvd:
    def test_reconstructs_input(self):
        rng = np.random.default_rng(3)
        m = rng.standard_normal((5, 5))
        u, s, vt = svd_square(m)
        np.testing.assert_allclose(u @ np.diag(s) @ vt, m, atol=1e-10)

    def test_factors_orthogonal(self):
        rng = np.random.default_rng(4)
        m = rng.standard_normal((6, 6))
        u, s, vt = svd_square(m)
        np.testing.assert_allclose(u @ u.T, np.eye(6), atol=1e-10)
        np.testing.assert_allclose(vt @ vt.T, np.eye(6), atol=1e-10)
        assert np.all(s[:-1] >= s[1:])

    def test_rejects_nonsquare(self):
        with pytest.raises(DimensionError):
            svd_square(np.ones((3, 4)))
