"""Unsupervised warmup: k-means codebooks and a learned orthonormal rotation.

The rotation spreads variance evenly across sub-vector blocks before
quantization. It is learned by alternating two exact minimization steps:
per-block k-means on the rotated data, then the orthogonal Procrustes
update for the rotation given the reconstructions. Both steps cannot
increase the total distortion, so the objective is monotone.

Rows are embeddings; rotating means `x @ R`. The Procrustes update
R = U @ Vt with (U, S, Vt) = svd(X.T @ X_hat) is the exact minimizer of
||X @ R - X_hat||^2 over orthonormal R under this convention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DataError, DimensionError
from .numerics import derive_seed, ensure_finite, make_rng, pairwise_sq_l2, svd_square
from .pq import Codebook, quantize_batch, reconstruct_batch

DEFAULT_OUTER_ITERS = 10
DEFAULT_INNER_ITERS = 20


@dataclass(frozen=True)
class Rotation:
    """Orthonormal change of basis applied to embeddings before quantization.

    With `enabled=False` the matrix is the identity and apply() is a no-op,
    which makes plain (unrotated) product quantization a degenerate case of
    the same pipeline.
    """

    matrix: np.ndarray
    enabled: bool = True

    def __post_init__(self):
        m = self.matrix
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError(f"rotation must be square, got shape {m.shape}")
        if self.enabled:
            drift = np.abs(m.astype(np.float64) @ m.T.astype(np.float64) - np.eye(m.shape[0]))
            if drift.max() >= 1e-5:
                raise ConfigurationError(
                    f"rotation is not orthonormal (max |R R^T - I| = {drift.max():.2e})"
                )

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def identity(cls, dim: int, enabled: bool = False) -> "Rotation":
        return cls(np.eye(dim, dtype=np.float32), enabled=enabled)

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Rotate rows of x (or a single vector)."""
        if not self.enabled:
            return x
        return x @ self.matrix

    def apply_inverse(self, x: np.ndarray) -> np.ndarray:
        if not self.enabled:
            return x
        return x @ self.matrix.T


def kmeans(
    points: np.ndarray,
    k: int,
    iters: int = DEFAULT_INNER_ITERS,
    seed: int = 0,
    init: np.ndarray | None = None,
    restarts: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm with k-means++ seeding and best-of-N restarts.

    Returns (centroids, assignments) where assignments are nearest-centroid
    for the returned centroids (ties to the lowest index). Empty clusters
    are re-seeded from the point farthest from its current centroid, which
    keeps the objective non-increasing. `init` warm-starts from given
    centroids as an extra candidate that wins ties, so a caller refining an
    earlier solution can only improve on it.
    """
    points = ensure_finite(np.asarray(points, dtype=np.float64), "points")
    if points.ndim != 2:
        raise DimensionError(f"points must be 2-D, got shape {points.shape}")
    n = points.shape[0]
    if n < k:
        raise ConfigurationError(f"need at least {k} points for {k} clusters, got {n}")

    starts: list[np.ndarray] = []
    if init is not None:
        start = np.array(init, dtype=np.float64)
        if start.shape != (k, points.shape[1]):
            raise DimensionError(f"init centroids shape {start.shape} != {(k, points.shape[1])}")
        starts.append(start)
    for r in range(max(restarts, 0) if init is not None else max(restarts, 1)):
        starts.append(_plus_plus_seed(points, k, make_rng(derive_seed(seed, r))))

    best = None
    for start in starts:
        candidate = _lloyd(points, start, iters)
        if best is None or candidate[2] < best[2]:
            best = candidate
    return best[0], best[1]


def _lloyd(
    points: np.ndarray, centroids: np.ndarray, iters: int
) -> tuple[np.ndarray, np.ndarray, float]:
    n = points.shape[0]
    k = centroids.shape[0]
    dists = pairwise_sq_l2(points, centroids)
    assignments = dists.argmin(axis=1)
    for _ in range(iters):
        new_centroids = centroids.copy()
        for j in range(k):
            members = assignments == j
            if members.any():
                new_centroids[j] = points[members].mean(axis=0)
        dists = pairwise_sq_l2(points, new_centroids)
        for j in range(k):
            if not np.any(assignments == j):
                # farthest point from its centroid becomes the new seed
                worst = int(dists[np.arange(n), dists.argmin(axis=1)].argmax())
                new_centroids[j] = points[worst]
                dists[:, j] = pairwise_sq_l2(points, new_centroids[j : j + 1])[:, 0]
        new_assignments = dists.argmin(axis=1)
        converged = np.array_equal(new_assignments, assignments)
        centroids, assignments = new_centroids, new_assignments
        if converged:
            break
    objective = float(dists[np.arange(n), assignments].sum())
    return centroids, assignments, objective


def _plus_plus_seed(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[rng.integers(n)]
    closest = pairwise_sq_l2(points, centroids[:1])[:, 0]
    for j in range(1, k):
        total = closest.sum()
        if total <= 0:
            centroids[j] = points[rng.integers(n)]
        else:
            centroids[j] = points[rng.choice(n, p=closest / total)]
        closest = np.minimum(closest, pairwise_sq_l2(points, centroids[j : j + 1])[:, 0])
    return centroids


def kmeans_objective(points: np.ndarray, centroids: np.ndarray) -> float:
    """Total squared distance of each point to its nearest centroid."""
    return float(pairwise_sq_l2(np.asarray(points, np.float64), centroids).min(axis=1).sum())


def _eigen_allocation_init(docs: np.ndarray, num_blocks: int) -> np.ndarray:
    """Initial rotation from covariance eigenvectors, balanced across blocks.

    Assigns principal directions greedily so each block receives an equal
    share of the variance (balanced log-eigenvalue sums). Starting the
    alternation here instead of at the identity avoids the poor local optima
    that plague heavily mixed inputs.
    """
    dim = docs.shape[1]
    sub = dim // num_blocks
    centered = docs - docs.mean(axis=0)
    cov = centered.T @ centered / max(len(docs) - 1, 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]  # descending variance
    eigvals, eigvecs = eigvals[order], eigvecs[:, order]

    log_vals = np.log(np.maximum(eigvals, 1e-12))
    buckets: list[list[int]] = [[] for _ in range(num_blocks)]
    loads = np.zeros(num_blocks)
    for idx in range(dim):
        open_blocks = [b for b in range(num_blocks) if len(buckets[b]) < sub]
        target = min(open_blocks, key=lambda b: loads[b])
        buckets[target].append(idx)
        loads[target] += log_vals[idx]
    columns = [idx for bucket in buckets for idx in bucket]
    return eigvecs[:, columns]


def distortion(docs: np.ndarray, rotation: Rotation, codebook: Codebook) -> float:
    """Total squared quantization error of the rotated documents."""
    rotated = np.asarray(rotation.apply(docs), dtype=np.float64)
    recon = reconstruct_batch(quantize_batch(rotated, codebook), codebook)
    diff = rotated - recon
    return float(np.einsum("ij,ij->", diff, diff))


def train_opq(
    docs: np.ndarray,
    num_blocks: int,
    num_centroids: int,
    outer_iters: int = DEFAULT_OUTER_ITERS,
    inner_iters: int = DEFAULT_INNER_ITERS,
    seed: int = 0,
    rotate: bool = True,
    restarts: int = 3,
    distortion_log: list[float] | None = None,
) -> tuple[Rotation, Codebook]:
    """Alternate per-block k-means with the Procrustes rotation update.

    The codebook update runs on the current rotation of the data; the
    rotation update is skipped on the last round so the returned pair is
    mutually consistent. With rotate=False this is plain per-block k-means.
    `distortion_log`, if given, receives the total squared error after each
    codebook update.
    """
    docs = ensure_finite(np.asarray(docs, dtype=np.float64), "docs")
    if docs.ndim != 2 or docs.shape[0] < 1:
        raise DataError(f"docs must be a nonempty 2-D matrix, got shape {docs.shape}")
    n, dim = docs.shape
    if dim % num_blocks != 0:
        raise DimensionError(f"dimension {dim} not divisible by {num_blocks} blocks")
    sub = dim // num_blocks

    r = _eigen_allocation_init(docs, num_blocks) if rotate else np.eye(dim)
    centroids = np.empty((num_blocks, num_centroids, sub))
    rounds = outer_iters if rotate else 1
    for outer in range(rounds):
        rotated = docs @ r
        recon = np.empty_like(rotated)
        for block in range(num_blocks):
            sl = slice(block * sub, (block + 1) * sub)
            c, a = kmeans(
                rotated[:, sl],
                num_centroids,
                iters=inner_iters,
                seed=derive_seed(seed, outer, block),
                # the warm-start candidate keeps the objective monotone;
                # fresh restarts let a round escape a poor earlier optimum
                init=centroids[block] if outer > 0 else None,
                restarts=restarts,
            )
            centroids[block] = c
            recon[:, sl] = c[a]
        if distortion_log is not None:
            diff = rotated - recon
            distortion_log.append(float(np.einsum("ij,ij->", diff, diff)))
        if rotate and outer < rounds - 1:
            u, _, vt = svd_square(docs.T @ recon)
            r = u @ vt

    rotation = Rotation(r.astype(np.float32), enabled=rotate) if rotate else Rotation.identity(dim)
    return rotation, Codebook(centroids.astype(np.float32))
