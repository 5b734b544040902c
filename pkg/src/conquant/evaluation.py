"""Retrieval metrics, code-usage diagnostics, and the ablation ladder.

Metric conventions: a ranking maps each query id to its retrieved document
ids in rank order; judgments map query ids to {doc id: grade} with grade
> 0 meaning relevant. Queries whose id is missing from the judgments (or
has no positively graded document) are excluded from every mean and
reported as skipped, never silently dropped.

The ablation ladder retrains the same benchmark under four feature levels
(frozen warmup, joint training, joint training with the balance
constraint, plus a second stage with dynamic negatives) and reports the
median MRR@10 over seeds per level.
"""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .opq import train_opq
from .synthetic import SyntheticSpec, generate
from .training import (
    EmbeddingTableEncoder,
    TrainConfig,
    TrainerState,
    default_mse_weight,
    encode_corpus,
    init_state,
    train_loop,
)

ABLATION_RUNGS = ("opq", "clustering", "constraint", "dynamic-negatives")


def _relevant_docs(judgments: dict) -> set:
    return {doc for doc, grade in judgments.items() if grade > 0}


def _split_evaluated(rankings: dict, qrels: dict) -> tuple[list, int]:
    """Query ids with at least one relevant judgment, plus the skipped count."""
    evaluated = [q for q in rankings if q in qrels and _relevant_docs(qrels[q])]
    return evaluated, len(rankings) - len(evaluated)


def mrr_at_k(rankings: dict, qrels: dict, k: int) -> float:
    """Mean over judged queries of 1/rank of the first relevant document
    within the top k, zero when none appears there."""
    if k < 1:
        raise ConfigurationError(f"k must be >= 1, got {k}")
    evaluated, _ = _split_evaluated(rankings, qrels)
    if not evaluated:
        return 0.0
    total = 0.0
    for q in evaluated:
        relevant = _relevant_docs(qrels[q])
        for rank, doc in enumerate(list(rankings[q])[:k], start=1):
            if doc in relevant:
                total += 1.0 / rank
                break
    return total / len(evaluated)


def recall_at_k(rankings: dict, qrels: dict, k: int) -> float:
    """Mean over judged queries of the fraction of relevant documents that
    appear in the top k."""
    if k < 1:
        raise ConfigurationError(f"k must be >= 1, got {k}")
    evaluated, _ = _split_evaluated(rankings, qrels)
    if not evaluated:
        return 0.0
    total = 0.0
    for q in evaluated:
        relevant = _relevant_docs(qrels[q])
        hits = len(relevant.intersection(list(rankings[q])[:k]))
        total += hits / len(relevant)
    return total / len(evaluated)


@dataclass(frozen=True)
class CodeBalance:
    """Code-usage statistics per sub-vector block.

    `counts[i, j]` is how many documents use centroid j in block i.
    `mean_sorted_frequencies` sorts each block's frequencies descending
    before averaging, so blocks with different popular codes still overlay;
    its first entry is the average share of the single most-used code.
    """

    counts: np.ndarray
    frequencies: np.ndarray
    entropies: np.ndarray
    mean_entropy: float
    mean_sorted_frequencies: np.ndarray

    @property
    def top_code_fraction(self) -> float:
        return float(self.mean_sorted_frequencies[0])


def code_balance(codes: np.ndarray, num_centroids: int) -> CodeBalance:
    """Histogram and Shannon entropy (bits) of code usage, per block and
    averaged across blocks. Entropy treats empty codes as contributing 0."""
    codes = np.atleast_2d(np.asarray(codes))
    if codes.size == 0:
        raise ConfigurationError("code balance needs a nonempty code set")
    if codes.max() >= num_centroids:
        raise ConfigurationError(
            f"code value {int(codes.max())} out of range for K={num_centroids}"
        )
    num_blocks = codes.shape[1]
    counts = np.stack(
        [np.bincount(codes[:, i], minlength=num_centroids) for i in range(num_blocks)]
    ).astype(np.int64)
    freq = counts / codes.shape[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(freq > 0, freq * np.log2(freq, where=freq > 0), 0.0)
    entropies = -terms.sum(axis=1)
    return CodeBalance(
        counts=counts,
        frequencies=freq,
        entropies=entropies,
        mean_entropy=float(entropies.mean()),
        mean_sorted_frequencies=np.sort(freq, axis=1)[:, ::-1].mean(axis=0),
    )


@dataclass(frozen=True)
class MetricReport:
    """Evaluation summary: ranking metrics per cutoff plus diagnostics.

    `mean_distortion` is the average squared reconstruction error over the
    corpus, or None when the evaluator had no access to the raw vectors.
    """

    mrr: dict
    recall: dict
    balance: CodeBalance
    queries_evaluated: int
    queries_skipped: int
    mean_distortion: float | None = None

    def __post_init__(self):
        for name, values in (("mrr", self.mrr), ("recall", self.recall)):
            for k, v in values.items():
                if not 0.0 <= v <= 1.0:
                    raise ConfigurationError(f"{name}@{k}={v} outside [0, 1]")

    def as_csv(self) -> str:
        lines = ["metric,value"]
        for k in sorted(self.mrr):
            lines.append(f"mrr@{k},{self.mrr[k]:.6f}")
        for k in sorted(self.recall):
            lines.append(f"recall@{k},{self.recall[k]:.6f}")
        if self.mean_distortion is not None:
            lines.append(f"mean_distortion,{self.mean_distortion:.6f}")
        lines.append(f"entropy_bits,{self.balance.mean_entropy:.6f}")
        lines.append(f"top_code_fraction,{self.balance.top_code_fraction:.6f}")
        lines.append(f"queries_evaluated,{self.queries_evaluated}")
        lines.append(f"queries_skipped,{self.queries_skipped}")
        return "\n".join(lines) + "\n"

    def as_table(self) -> str:
        rows = []
        for k in sorted(self.mrr):
            rows.append((f"MRR@{k}", f"{self.mrr[k]:.4f}"))
        for k in sorted(self.recall):
            rows.append((f"Recall@{k}", f"{self.recall[k]:.4f}"))
        if self.mean_distortion is not None:
            rows.append(("Mean distortion", f"{self.mean_distortion:.4f}"))
        rows.append(("Code entropy (bits)", f"{self.balance.mean_entropy:.4f}"))
        rows.append(("Top-code share", f"{self.balance.top_code_fraction:.4f}"))
        rows.append(("Queries evaluated", str(self.queries_evaluated)))
        rows.append(("Queries skipped", str(self.queries_skipped)))
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{name:<{width}}  {value}" for name, value in rows) + "\n"


def evaluate_rankings(
    rankings: dict,
    qrels: dict,
    codes: np.ndarray,
    num_centroids: int,
    cutoffs: tuple = (10, 100),
    mean_distortion: float | None = None,
) -> MetricReport:
    """Bundle ranking metrics at each cutoff with code-usage diagnostics."""
    evaluated, skipped = _split_evaluated(rankings, qrels)
    return MetricReport(
        mrr={k: mrr_at_k(rankings, qrels, k) for k in cutoffs},
        recall={k: recall_at_k(rankings, qrels, k) for k in cutoffs},
        balance=code_balance(codes, num_centroids),
        queries_evaluated=len(evaluated),
        queries_skipped=skipped,
        mean_distortion=mean_distortion,
    )


def score_codes(
    query_rows: np.ndarray, codes: np.ndarray, centroids: np.ndarray
) -> np.ndarray:
    """Inner products of rotated-space queries against coded documents,
    shape (num queries, num docs), via per-block lookup tables."""
    q = np.asarray(query_rows, dtype=np.float64)
    m, k, sub = centroids.shape
    tables = np.einsum("bmd,mkd->bmk", q.reshape(q.shape[0], m, sub), centroids)
    idx = codes.astype(np.intp)
    scores = np.zeros((q.shape[0], codes.shape[0]))
    for i in range(m):
        scores += tables[:, i, idx[:, i]]
    return scores


def rank_codes(
    query_rows: np.ndarray,
    codes: np.ndarray,
    centroids: np.ndarray,
    topk: int,
    chunk: int = 128,
) -> np.ndarray:
    """Top document ids per query, descending score with ascending-id tie
    break, computed in query chunks to bound memory."""
    q = np.asarray(query_rows, dtype=np.float64)
    num_docs = codes.shape[0]
    topk = min(topk, num_docs)
    doc_index = np.arange(num_docs)
    out = np.empty((q.shape[0], topk), dtype=np.intp)
    for start in range(0, q.shape[0], chunk):
        scores = score_codes(q[start : start + chunk], codes, centroids)
        for r in range(scores.shape[0]):
            order = np.lexsort((doc_index, -scores[r]))
            out[start + r] = order[:topk]
    return out


def _mrr_of_state(state: TrainerState, sources: np.ndarray, k: int = 10) -> float:
    """MRR@k of exhaustive quantized retrieval under the state's current
    encoders and centroids."""
    codes = encode_corpus(state)
    q_rows = state.rotation.apply(state.query_encoder.encode(np.arange(state.num_queries)))
    ranked = rank_codes(q_rows, codes, state.centroids, topk=k)
    rankings = {i: ranked[i].tolist() for i in range(len(sources))}
    qrels = {i: {int(sources[i]): 1} for i in range(len(sources))}
    return mrr_at_k(rankings, qrels, k)


@dataclass(frozen=True)
class AblationRung:
    name: str
    per_seed: list[float]
    median: float


@dataclass(frozen=True)
class AblationTable:
    rungs: list[AblationRung]

    def as_csv(self) -> str:
        seeds = len(self.rungs[0].per_seed) if self.rungs else 0
        header = "rung," + ",".join(f"seed{i}" for i in range(seeds)) + ",median"
        lines = [header]
        for r in self.rungs:
            values = ",".join(f"{v:.6f}" for v in r.per_seed)
            lines.append(f"{r.name},{values},{r.median:.6f}")
        return "\n".join(lines) + "\n"


def run_ablation(
    spec: SyntheticSpec,
    seeds,
    num_blocks: int = 4,
    num_centroids: int = 16,
    steps_stage1: int = 300,
    steps_stage2: int = 150,
    batch_size: int = 128,
    negatives_per_query: int = 4,
    lr_encoder: float = 0.05,
    lr_codebook: float = 0.05,
    mse_weight: float | None = None,
    opq_outer: int = 1,
    opq_inner: int = 3,
    opq_restarts: int = 1,
    progress=None,
) -> AblationTable:
    """Train the feature ladder per seed and report median MRR@10 per rung.

    Each seed regenerates the benchmark and the warmup, so the medians
    reflect run-to-run variation of the whole pipeline, not just of
    training. The two joint-training rungs share their warmup; the dynamic
    negatives rung continues from the constrained rung's end state with
    codes re-encoded at the stage boundary.

    The warmup budget is deliberately small. A warmup run to convergence
    on a corpus this size leaves joint training nothing to fix, which
    flattens the ladder; a budget-limited warmup leaves some centroids
    starved, the situation the balanced-assignment rung exists to repair
    (an unselected centroid receives exactly zero gradient, so plain
    nearest-centroid training can never move it).
    """
    lam = default_mse_weight(num_blocks) if mse_weight is None else mse_weight
    results: dict[str, list[float]] = {name: [] for name in ABLATION_RUNGS}

    for seed in seeds:
        bench = generate(dataclasses.replace(spec, seed=int(seed)))
        rotation, codebook = train_opq(
            bench.docs,
            num_blocks,
            num_centroids,
            outer_iters=opq_outer,
            inner_iters=opq_inner,
            seed=int(seed),
            restarts=opq_restarts,
        )

        def fresh_state(config: TrainConfig) -> TrainerState:
            return init_state(
                EmbeddingTableEncoder(bench.docs),
                EmbeddingTableEncoder(bench.queries),
                rotation,
                codebook,
                bench.relevant,
                config,
            )

        def stage1_config(constrained: bool) -> TrainConfig:
            return TrainConfig(
                mse_weight=lam,
                lr_encoder=lr_encoder,
                lr_codebook=lr_codebook,
                batch_size=batch_size,
                stage=1,
                negatives_per_query=negatives_per_query,
                constrained=constrained,
                seed=int(seed),
            )

        frozen = fresh_state(stage1_config(True))
        results["opq"].append(_mrr_of_state(frozen, bench.query_sources))
        if progress:
            progress(f"seed {seed} opq {results['opq'][-1]:.4f}")

        unconstrained = fresh_state(stage1_config(False))
        train_loop(unconstrained, stage1_config(False), steps_stage1)
        results["clustering"].append(_mrr_of_state(unconstrained, bench.query_sources))
        if progress:
            progress(f"seed {seed} clustering {results['clustering'][-1]:.4f}")

        constrained = fresh_state(stage1_config(True))
        train_loop(constrained, stage1_config(True), steps_stage1)
        results["constraint"].append(_mrr_of_state(constrained, bench.query_sources))
        if progress:
            progress(f"seed {seed} constraint {results['constraint'][-1]:.4f}")

        stage2 = copy.deepcopy(constrained)
        stage2.corpus_codes = encode_corpus(stage2)
        stage2_config = TrainConfig(
            mse_weight=lam,
            lr_encoder=lr_encoder,
            lr_codebook=lr_codebook,
            batch_size=batch_size,
            stage=2,
            negatives_per_query=negatives_per_query,
            seed=int(seed),
        )
        train_loop(stage2, stage2_config, steps_stage2)
        results["dynamic-negatives"].append(
            _mrr_of_state_fixed_codes(stage2, bench.query_sources)
        )
        if progress:
            progress(f"seed {seed} dynamic-negatives {results['dynamic-negatives'][-1]:.4f}")

    rungs = [
        AblationRung(name=name, per_seed=vals, median=float(np.median(vals)))
        for name, vals in results.items()
    ]
    return AblationTable(rungs=rungs)


def _mrr_of_state_fixed_codes(state: TrainerState, sources: np.ndarray, k: int = 10) -> float:
    """Stage-2 evaluation: the frozen corpus codes are the index."""
    q_rows = state.rotation.apply(state.query_encoder.encode(np.arange(state.num_queries)))
    ranked = rank_codes(q_rows, state.corpus_codes, state.centroids, topk=k)
    rankings = {i: ranked[i].tolist() for i in range(len(sources))}
    qrels = {i: {int(sources[i]): 1} for i in range(len(sources))}
    return mrr_at_k(rankings, qrels, k)
