"""Planted synthetic retrieval benchmark.

Documents are drawn around G Gaussian cluster centers in R^D and scaled
to unit length; each query is a noisy copy of one distinct document (its
single relevant result), also unit length. On the sphere the maximum
inner product coincides with the nearest neighbor, so the planted answer
is the top result of ideal uncompressed retrieval and exhaustive search
is a cheap, unambiguous oracle. That mirrors the regime the quantizer is
meant for: embeddings whose inner products already express relevance,
with compression quality the only thing at stake.

Cluster populations follow a 1/rank law rather than a uniform split.
Text embedding corpora are heavily skewed toward popular topics, and the
skew is what makes code balance interesting: a quantizer trained without
any usage constraint concentrates codes on the dense regions, while a
balance-constrained one keeps resolution spread in proportion to where
documents (and therefore queries) actually live.

The scale defaults (10k docs, D=32, G=64) keep a full train/eval cycle in
seconds while leaving real quantization error to fight over: every
sub-vector block sees far more cluster structure than one code can
express.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .numerics import make_rng

# document scatter around its unit-length cluster center; queries
# perturb a document much less than this
DOC_SPREAD = 0.25

_STREAM_BENCH = 23


@dataclass(frozen=True)
class SyntheticSpec:
    """Generator knobs for one benchmark instance."""

    num_docs: int = 10000
    dim: int = 32
    num_clusters: int = 64
    num_queries: int = 1000
    noise: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.num_clusters < 1 or self.num_docs < self.num_clusters:
            raise ConfigurationError(
                f"need num_docs >= num_clusters >= 1, got {self.num_docs} docs, "
                f"{self.num_clusters} clusters"
            )
        if self.num_queries < 1 or self.num_queries > self.num_docs:
            raise ConfigurationError(
                f"num_queries must be in [1, num_docs], got {self.num_queries}"
            )
        if self.dim < 1:
            raise ConfigurationError(f"dim must be >= 1, got {self.dim}")
        if self.noise < 0:
            raise ConfigurationError(f"noise must be >= 0, got {self.noise}")


@dataclass(frozen=True)
class SyntheticBenchmark:
    """One generated corpus with queries and their planted relevance."""

    docs: np.ndarray
    queries: np.ndarray
    query_sources: np.ndarray

    @property
    def relevant(self) -> list[list[int]]:
        """Per-query relevant document lists (always length 1 here)."""
        return [[int(s)] for s in self.query_sources]

    def qrels(self) -> dict[str, dict[int, int]]:
        """Relevance judgments keyed by the 'q{i}' naming the files use."""
        return {f"q{i}": {int(s): 1} for i, s in enumerate(self.query_sources)}


def _unit_rows(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def generate(spec: SyntheticSpec) -> SyntheticBenchmark:
    """Sample a benchmark instance; fully determined by the spec."""
    rng = make_rng(spec.seed, _STREAM_BENCH)
    centers = _unit_rows(rng.standard_normal((spec.num_clusters, spec.dim)))
    weights = 1.0 / np.arange(1, spec.num_clusters + 1)
    membership = rng.choice(spec.num_clusters, size=spec.num_docs, p=weights / weights.sum())
    docs = _unit_rows(
        centers[membership] + DOC_SPREAD * rng.standard_normal((spec.num_docs, spec.dim))
    )
    sources = rng.choice(spec.num_docs, size=spec.num_queries, replace=False)
    queries = _unit_rows(
        docs[sources] + spec.noise * rng.standard_normal((spec.num_queries, spec.dim))
    )
    return SyntheticBenchmark(
        docs=docs.astype(np.float32),
        queries=queries.astype(np.float32),
        query_sources=sources.astype(np.intp),
    )
