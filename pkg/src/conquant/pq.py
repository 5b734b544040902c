"""Product quantization core.

A codebook holds M independent sets of K centroid sub-vectors of dimension
D/M. A vector is compressed to M one-byte codes (K <= 256), one centroid
index per sub-vector block, chosen by minimum squared distance. Scoring an
uncompressed query against compressed documents goes through a per-query
lookup table of partial inner products (asymmetric distance computation).

Codes are zero-based everywhere: in memory, on disk, and in this API.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, CorruptIndexError, DimensionError
from .numerics import ensure_finite


@dataclass(frozen=True)
class Codebook:
    """M x K grid of centroid sub-vectors, each of length dim/M.

    `centroids` has shape (M, K, dim/M), float32. Immutable once built;
    training code constructs a new Codebook after each update.
    """

    centroids: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.centroids, dtype=np.float32)
        if c.ndim != 3:
            raise DimensionError(f"codebook must be (M, K, dim/M), got shape {c.shape}")
        if c.shape[1] > 256:
            raise ConfigurationError(f"K={c.shape[1]} exceeds 256; codes must fit one byte")
        ensure_finite(c, "codebook centroids")
        object.__setattr__(self, "centroids", c)

    @property
    def num_blocks(self) -> int:
        return self.centroids.shape[0]

    @property
    def num_centroids(self) -> int:
        return self.centroids.shape[1]

    @property
    def sub_dim(self) -> int:
        return self.centroids.shape[2]

    @property
    def dim(self) -> int:
        return self.num_blocks * self.sub_dim


def compression_ratio(dim: int, num_blocks: int) -> float:
    """Size ratio of raw 32-bit float vectors over M-byte code sequences."""
    return 4.0 * dim / num_blocks


def split(v: np.ndarray, num_blocks: int) -> list[np.ndarray]:
    """Split a vector into `num_blocks` equal-length contiguous sub-vectors."""
    v = np.asarray(v)
    if v.ndim != 1 or v.shape[0] % num_blocks != 0:
        raise DimensionError(f"cannot split length {v.shape} into {num_blocks} equal blocks")
    return list(v.reshape(num_blocks, -1))


def _as_blocks(x: np.ndarray, cb: Codebook) -> np.ndarray:
    """View (n, dim) rows as (n, M, dim/M) blocks, validating the width."""
    x = np.atleast_2d(np.asarray(x))
    if x.shape[1] != cb.dim:
        raise DimensionError(f"vector dimension {x.shape[1]} != codebook dimension {cb.dim}")
    return x.reshape(x.shape[0], cb.num_blocks, cb.sub_dim)


def quantize_batch(x: np.ndarray, cb: Codebook) -> np.ndarray:
    """Nearest-centroid codes for each row of `x`, shape (n, M) uint8.

    Per block the code is the argmin of squared distance to the K centroids;
    ties break to the lowest index.
    """
    blocks = _as_blocks(x, cb).astype(np.float64)
    cents = cb.centroids.astype(np.float64)
    # (n, M, K) squared distances via the norm expansion
    cross = np.einsum("nmd,mkd->nmk", blocks, cents)
    x_sq = np.einsum("nmd,nmd->nm", blocks, blocks)[:, :, None]
    c_sq = np.einsum("mkd,mkd->mk", cents, cents)[None, :, :]
    d2 = x_sq + c_sq - 2.0 * cross
    return d2.argmin(axis=2).astype(np.uint8)


def quantize(v: np.ndarray, cb: Codebook) -> np.ndarray:
    """Code sequence (length M, uint8) for one vector."""
    return quantize_batch(np.asarray(v)[None, :], cb)[0]


def _check_codes(codes: np.ndarray, cb: Codebook) -> np.ndarray:
    codes = np.asarray(codes)
    if codes.shape[-1] != cb.num_blocks:
        raise DimensionError(f"code length {codes.shape[-1]} != M={cb.num_blocks}")
    if codes.size and int(codes.max()) >= cb.num_centroids:
        raise CorruptIndexError(
            f"code value {int(codes.max())} out of range for K={cb.num_centroids}"
        )
    return codes


def reconstruct_batch(codes: np.ndarray, cb: Codebook) -> np.ndarray:
    """Quantized embeddings for (n, M) codes: concatenated chosen centroids."""
    codes = _check_codes(np.atleast_2d(codes), cb)
    n = codes.shape[0]
    picked = cb.centroids[np.arange(cb.num_blocks)[None, :], codes.astype(np.intp)]
    return picked.reshape(n, cb.dim)


def reconstruct(codes: np.ndarray, cb: Codebook) -> np.ndarray:
    """Quantized embedding (length dim) for one code sequence."""
    return reconstruct_batch(np.asarray(codes)[None, :], cb)[0]


def adc_table(q: np.ndarray, cb: Codebook) -> np.ndarray:
    """Per-query lookup table, shape (M, K): table[i, j] = <q_i, c_ij>.

    Inner products accumulate in float64, matching the scalar kernel.
    """
    q = np.asarray(q)
    if q.ndim != 1 or q.shape[0] != cb.dim:
        raise DimensionError(f"query dimension {q.shape} != codebook dimension {cb.dim}")
    q_blocks = q.reshape(cb.num_blocks, cb.sub_dim).astype(np.float64)
    return np.einsum("mkd,md->mk", cb.centroids.astype(np.float64), q_blocks)


def adc_score(table: np.ndarray, codes: np.ndarray) -> float:
    """Score one code sequence: sum_i table[i, codes[i]]."""
    return float(adc_scores(table, np.asarray(codes)[None, :])[0])


def adc_scores(table: np.ndarray, codes: np.ndarray) -> np.ndarray:
    """Scores for (n, M) codes against one query's (M, K) table, float64."""
    table = np.asarray(table, dtype=np.float64)
    codes = np.atleast_2d(codes)
    if codes.shape[1] != table.shape[0]:
        raise DimensionError(f"code length {codes.shape[1]} != table blocks {table.shape[0]}")
    if codes.size and int(codes.max()) >= table.shape[1]:
        raise CorruptIndexError(f"code value {int(codes.max())} out of range for table K={table.shape[1]}")
    picked = table[np.arange(table.shape[0])[None, :], codes.astype(np.intp)]
    return picked.sum(axis=1)
