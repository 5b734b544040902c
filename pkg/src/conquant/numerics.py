"""Small dense linear-algebra kernel used by every other module.

Conventions: vectors and matrices are stored as float32 numpy arrays
(row-major), while every reduction (distances, inner products, loss sums)
accumulates in float64 so long scans do not drift.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError, DimensionError


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Seeded PRNG, splittable by a stream key.

    Distinct stream keys under the same seed are statistically independent,
    so subsystems (k-means, batching, negative sampling) can draw without
    interfering with one another's reproducibility.
    """
    key = tuple(int(s) for s in stream)
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=key))


def derive_seed(seed: int, *key: int) -> int:
    """Stable child seed for a nested subsystem, keyed by position.

    Lets e.g. iteration 3 / block 1 of a training loop own its own seed
    without colliding with any other (seed, key) combination.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def ensure_finite(arr: np.ndarray, name: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite values")
    return arr


def inner(a: np.ndarray, b: np.ndarray) -> float:
    """Inner product <a, b> with float64 accumulation."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise DimensionError(f"inner product length mismatch: {a.shape} vs {b.shape}")
    return float(np.dot(a.astype(np.float64, copy=False), b.astype(np.float64, copy=False)))


def squared_l2(a: np.ndarray, b: np.ndarray) -> float:
    """Squared Euclidean distance sum((a_k - b_k)^2), accumulated in float64."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise DimensionError(f"squared_l2 length mismatch: {a.shape} vs {b.shape}")
    diff = a.astype(np.float64, copy=False) - b.astype(np.float64, copy=False)
    return float(np.dot(diff, diff))


def pairwise_sq_l2(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """All-pairs squared distances between rows of `points` (n, d) and rows of
    `centers` (k, d), returned as an (n, k) float64 matrix.

    Uses the |x|^2 + |c|^2 - 2<x,c> expansion; tiny negative values from
    cancellation are clamped to zero.
    """
    p = np.asarray(points, dtype=np.float64)
    c = np.asarray(centers, dtype=np.float64)
    if p.ndim != 2 or c.ndim != 2 or p.shape[1] != c.shape[1]:
        raise DimensionError(f"pairwise_sq_l2 shape mismatch: {p.shape} vs {c.shape}")
    d2 = (p * p).sum(axis=1)[:, None] + (c * c).sum(axis=1)[None, :] - 2.0 * (p @ c.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


def svd_square(m: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Full SVD of a square matrix: returns (U, S, Vt) with m = U @ diag(S) @ Vt.

    Singular values are in descending order; U and Vt are orthonormal.
    """
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"svd_square requires a square matrix, got {m.shape}")
    ensure_finite(m, "svd_square input")
    u, s, vt = np.linalg.svd(m.astype(np.float64, copy=False))
    return u, s, vt
