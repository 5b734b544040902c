"""Tests for k-means and rotation warmup."""

import numpy as np
import pytest

from conquant.errors import ConfigurationError, DataError, DimensionError
from conquant.numerics import pairwise_sq_l2
from conquant.opq import Rotation, distortion, kmeans, kmeans_objective, train_opq


def random_orthonormal(rng, dim):
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    return q


def blob_corpus(rng, n, dim, centers, sigma=0.15):
    """Points around given centers, plus which center each came from."""
    labels = rng.integers(0, len(centers), size=n)
    return centers[labels] + sigma * rng.standard_normal((n, dim)), labels


class TestKmeans:
    def test_single_cluster_is_global_mean(self):
        rng = np.random.default_rng(0)
        points = rng.standard_normal((40, 3))
        centroids, assignments = kmeans(points, 1, iters=5, seed=0)
        np.testing.assert_allclose(centroids[0], points.mean(axis=0), atol=1e-12)
        np.testing.assert_array_equal(assignments, np.zeros(40))

    def test_distinct_points_become_centroids(self):
        locations = np.array([[0.0, 0.0], [4.0, 0.0], [0.0, 4.0], [4.0, 4.0]])
        points = np.repeat(locations, 5, axis=0)
        centroids, assignments = kmeans(points, 4, iters=10, seed=1)
        got = centroids[np.lexsort(centroids.T)]
        np.testing.assert_allclose(got, locations[np.lexsort(locations.T)], atol=1e-12)
        assert len(np.unique(assignments)) == 4

    def test_two_blobs_recover_means(self):
        rng = np.random.default_rng(2)
        centers = np.array([[-3.0, 0.0], [3.0, 0.0]])
        points, labels = blob_corpus(rng, 200, 2, centers, sigma=0.2)
        centroids, assignments = kmeans(points, 2, iters=20, seed=2)
        order = np.argsort(centroids[:, 0])
        for k, blob in enumerate(order):
            want = points[labels == k].mean(axis=0)
            np.testing.assert_allclose(centroids[blob], want, atol=1e-9)

    def test_assignments_are_nearest(self):
        rng = np.random.default_rng(3)
        points = rng.standard_normal((60, 4))
        centroids, assignments = kmeans(points, 5, iters=15, seed=3)
        np.testing.assert_array_equal(
            assignments, pairwise_sq_l2(points, centroids).argmin(axis=1)
        )

    def test_objective_non_increasing_in_iters(self):
        rng = np.random.default_rng(4)
        points = rng.standard_normal((100, 3))
        objectives = []
        for iters in range(1, 8):
            centroids, _ = kmeans(points, 6, iters=iters, seed=4)
            objectives.append(kmeans_objective(points, centroids))
        diffs = np.diff(objectives)
        assert np.all(diffs <= 1e-9)

    def test_warm_start_cannot_regress(self):
        rng = np.random.default_rng(5)
        points = rng.standard_normal((80, 3))
        first, _ = kmeans(points, 4, iters=3, seed=5)
        refined, _ = kmeans(points, 4, iters=5, init=first)
        assert kmeans_objective(points, refined) <= kmeans_objective(points, first) + 1e-9

    def test_empty_cluster_reseeded(self):
        rng = np.random.default_rng(6)
        points = rng.standard_normal((30, 2))
        # plant one init centroid far away so it owns no points at first
        init = np.vstack([points[:2], [[50.0, 50.0]]])
        centroids, assignments = kmeans(points, 3, iters=10, init=init)
        assert len(np.unique(assignments)) == 3
        assert np.all(np.abs(centroids) < 10.0)

    def test_deterministic(self):
        rng = np.random.default_rng(7)
        points = rng.standard_normal((50, 3))
        a, _ = kmeans(points, 4, iters=10, seed=42)
        b, _ = kmeans(points, 4, iters=10, seed=42)
        np.testing.assert_array_equal(a, b)

    def test_too_few_points(self):
        with pytest.raises(ConfigurationError):
            kmeans(np.ones((3, 2)), 4)


class TestRotation:
    def test_rejects_non_orthonormal(self):
        with pytest.raises(ConfigurationError):
            Rotation(np.array([[1.0, 0.0], [0.0, 2.0]], dtype=np.float32))

    def test_identity_is_noop(self):
        rot = Rotation.identity(4)
        x = np.arange(8, dtype=np.float32).reshape(2, 4)
        assert rot.apply(x) is x
        assert not rot.enabled

    def test_apply_round_trip(self):
        rng = np.random.default_rng(8)
        q = random_orthonormal(rng, 6).astype(np.float32)
        rot = Rotation(q)
        x = rng.standard_normal((5, 6))
        np.testing.assert_allclose(rot.apply_inverse(rot.apply(x)), x, atol=1e-5)

    def test_rejects_nonsquare(self):
        with pytest.raises(DimensionError):
            Rotation(np.ones((2, 3), dtype=np.float32))


class TestTrainOpq:
    def test_monotone_distortion(self):
        rng = np.random.default_rng(9)
        for trial in range(3):
            docs = rng.standard_normal((150, 8))
            log = []
            train_opq(docs, 2, 4, outer_iters=6, seed=trial, distortion_log=log)
            assert len(log) == 6
            assert np.all(np.diff(log) <= 1e-6)

    def test_returned_pair_matches_last_logged_distortion(self):
        rng = np.random.default_rng(10)
        docs = rng.standard_normal((120, 6))
        log = []
        rotation, codebook = train_opq(docs, 3, 4, outer_iters=4, seed=0, distortion_log=log)
        got = distortion(docs, rotation, codebook)
        assert got == pytest.approx(log[-1], rel=1e-4)

    def test_axis_aligned_gains_nothing_from_rotation(self):
        rng = np.random.default_rng(11)
        centers = np.array([[0.0, 0.0], [5.0, 0.0], [0.0, 5.0], [5.0, 5.0]])
        blocks = [blob_corpus(rng, 300, 2, centers)[0] for _ in range(2)]
        docs = np.hstack(blocks)
        log_plain, log_rot = [], []
        train_opq(docs, 2, 4, outer_iters=1, rotate=False, seed=0, distortion_log=log_plain)
        train_opq(docs, 2, 4, outer_iters=8, seed=0, distortion_log=log_rot)
        assert log_rot[-1] >= log_plain[-1] * (1 - 1e-3)

    def test_planted_rotation_recovered(self):
        # axis-aligned grid clusters (two values per coordinate, distinct
        # scales) hidden behind a random rotation; learning should bring the
        # distortion within 5% of quantizing the unrotated data directly
        rng = np.random.default_rng(12)
        dim, n = 6, 400
        scales = 1.0 + 0.25 * np.arange(dim)
        signs = rng.choice([-1.0, 1.0], size=(n, dim))
        aligned = signs * scales + 0.1 * rng.standard_normal((n, dim))
        docs = aligned @ random_orthonormal(rng, dim)

        log_planted = []
        train_opq(aligned, 3, 4, outer_iters=1, rotate=False, seed=0,
                  distortion_log=log_planted)
        log_learned = []
        train_opq(docs, 3, 4, outer_iters=10, seed=0, distortion_log=log_learned)
        assert log_learned[-1] <= 1.05 * log_planted[-1]

    def test_rotate_false_equals_per_block_kmeans(self):
        rng = np.random.default_rng(13)
        docs = rng.standard_normal((90, 6))
        rotation, codebook = train_opq(docs, 2, 3, inner_iters=12, rotate=False, seed=7)
        assert not rotation.enabled
        from conquant.numerics import derive_seed

        for block in range(2):
            ref, _ = kmeans(docs[:, block * 3 : (block + 1) * 3], 3, iters=12,
                            seed=derive_seed(7, 0, block), restarts=3)
            np.testing.assert_allclose(codebook.centroids[block], ref, atol=1e-6)

    def test_scalar_blocks_with_enough_centroids_zero_distortion(self):
        # each coordinate takes few distinct values; one centroid per value
        rng = np.random.default_rng(14)
        docs = rng.choice([0.0, 1.0, 2.0], size=(50, 4))
        log = []
        train_opq(docs, 4, 3, outer_iters=1, rotate=False, seed=0, distortion_log=log)
        assert log[-1] == pytest.approx(0.0, abs=1e-12)

    def test_error_cases(self):
        rng = np.random.default_rng(15)
        with pytest.raises(DimensionError):
            train_opq(rng.standard_normal((20, 7)), 2, 4)
        with pytest.raises(DataError):
            train_opq(np.empty((0, 8)), 2, 4)
        with pytest.raises(ConfigurationError):
            train_opq(rng.standard_normal((3, 8)), 2, 4)
