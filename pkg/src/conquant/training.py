"""Joint training of dual encoders and the quantization codebook.

The supervised objective combines a softmax ranking loss over quantized
document representations with a clustering (reconstruction) penalty that
keeps each document close to its chosen centroids. Hard code assignment is
not differentiable, so gradients follow an explicit policy:

  - the document encoder receives the ranking gradient as if the quantized
    vector were the encoder output (straight-through), plus the clustering
    pull 2(d - d_hat) with the reconstruction treated as a constant;
  - the reconstruction side receives the ranking gradient plus the opposite
    clustering term -2(d - d_hat);
  - each centroid accumulates the reconstruction gradient of exactly the
    rows assigned to it this step, so unchosen centroids get zero.

Training runs in two stages. Stage 1 jointly trains both encoders and the
codebook, reassigning codes for the documents of each batch with the
balanced transport solver (or plain nearest-centroid when the balance
constraint is switched off for ablation). Stage 2 freezes the document
codes and the document encoder, mines fresh hard negatives every step with
the current query encoder, and continues training the query encoder and
the centroid values only.

All losses and gradients live in the rotated space; the orthonormal
rotation from warmup stays fixed and gradients are chained back through it
before touching encoder parameters. Internals use float64 so analytic
gradients match central finite differences tightly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ConsistencyError, DimensionError, DivergenceError
from .numerics import ensure_finite, make_rng, pairwise_sq_l2
from .opq import Rotation
from .pq import Codebook
from .transport import assign_constrained

DEFAULT_NEGATIVE_POOL = 100

# sampling stream tags so the per-step draws never collide across purposes
_STREAM_BATCH = 5


def default_mse_weight(num_blocks: int) -> float:
    """Clustering-loss weight that worked well per compression level.

    Fewer blocks means harsher compression, which needs a stronger pull
    toward the centroids to keep reconstructions usable.
    """
    if num_blocks >= 24:
        return 0.05
    if num_blocks >= 16:
        return 0.07
    if num_blocks >= 12:
        return 0.1
    if num_blocks >= 8:
        return 0.2
    return 0.3


class EmbeddingTableEncoder:
    """Free embedding per item: the parameter table rows are the outputs.

    Suits corpora where every train-time item is known up front; there is
    no generalization to unseen ids.
    """

    kind = "table"

    def __init__(self, table: np.ndarray):
        table = np.array(table, dtype=np.float64)
        if table.ndim != 2:
            raise DimensionError(f"embedding table must be 2-D, got shape {table.shape}")
        ensure_finite(table, "embedding table")
        self.params = table

    @property
    def num_items(self) -> int:
        return self.params.shape[0]

    @property
    def dim_out(self) -> int:
        return self.params.shape[1]

    def encode(self, ids: np.ndarray) -> np.ndarray:
        return self.params[np.asarray(ids, dtype=np.intp)]

    def param_grad(self, ids: np.ndarray, grad_rows: np.ndarray) -> np.ndarray:
        """Dense gradient w.r.t. the full table; duplicate ids accumulate."""
        g = np.zeros_like(self.params)
        np.add.at(g, np.asarray(ids, dtype=np.intp), grad_rows)
        return g

    def apply_gradient(self, ids: np.ndarray, grad_rows: np.ndarray, lr: float) -> None:
        np.subtract.at(self.params, np.asarray(ids, dtype=np.intp), lr * grad_rows)


class LinearFeatureEncoder:
    """Linear projection of fixed per-item feature vectors.

    Outputs are features[ids] @ weight; only the weight matrix trains. With
    square identity-initialized weight this starts out equal to the raw
    features but generalizes to any item with a feature vector.
    """

    kind = "linear"

    def __init__(self, features: np.ndarray, weight: np.ndarray):
        features = np.array(features, dtype=np.float64)
        weight = np.array(weight, dtype=np.float64)
        if features.ndim != 2:
            raise DimensionError(f"features must be 2-D, got shape {features.shape}")
        if weight.ndim != 2 or weight.shape[0] != features.shape[1]:
            raise DimensionError(
                f"weight shape {weight.shape} does not project features of width {features.shape[1]}"
            )
        ensure_finite(features, "encoder features")
        ensure_finite(weight, "encoder weight")
        self.features = features
        self.params = weight

    @classmethod
    def identity(cls, features: np.ndarray) -> "LinearFeatureEncoder":
        features = np.asarray(features, dtype=np.float64)
        return cls(features, np.eye(features.shape[1]))

    @property
    def num_items(self) -> int:
        return self.features.shape[0]

    @property
    def dim_out(self) -> int:
        return self.params.shape[1]

    def encode(self, ids: np.ndarray) -> np.ndarray:
        return self.features[np.asarray(ids, dtype=np.intp)] @ self.params

    def param_grad(self, ids: np.ndarray, grad_rows: np.ndarray) -> np.ndarray:
        return self.features[np.asarray(ids, dtype=np.intp)].T @ grad_rows

    def apply_gradient(self, ids: np.ndarray, grad_rows: np.ndarray, lr: float) -> None:
        self.params -= lr * self.param_grad(ids, grad_rows)


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for one training run.

    `mse_weight` balances the clustering loss against the ranking loss.
    `stage` is 1 (joint, per-batch code reassignment) or 2 (codes and
    document encoder frozen, dynamic negatives). `epsilon` and `tol` of
    None defer to the transport solver's defaults. Zero learning rates are
    allowed so a run can freeze a component for diagnostics.
    """

    mse_weight: float
    lr_encoder: float = 1e-2
    lr_codebook: float = 1e-2
    batch_size: int = 32
    stage: int = 1
    negatives_per_query: int = 4
    constrained: bool = True
    epsilon: float | None = None
    max_iters: int = 100
    tol: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.mse_weight < 0:
            raise ConfigurationError(f"mse_weight must be >= 0, got {self.mse_weight}")
        if self.lr_encoder < 0 or self.lr_codebook < 0:
            raise ConfigurationError("learning rates must be >= 0")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.stage not in (1, 2):
            raise ConfigurationError(f"stage must be 1 or 2, got {self.stage}")
        if self.negatives_per_query < 1:
            raise ConfigurationError(
                f"negatives_per_query must be >= 1, got {self.negatives_per_query}"
            )
        if self.max_iters < 1:
            raise ConfigurationError(f"max_iters must be >= 1, got {self.max_iters}")


@dataclass(frozen=True)
class TrainingBatch:
    """One step's sampled pairs plus everything derived from them.

    All vectors are in the rotated space. `docs` holds each distinct
    document of the batch exactly once; `pos_rows` and `neg_rows` index
    into it. `recon` must equal the centroid gather of `codes`; backward
    verifies that before trusting the codebook gradient.
    """

    query_ids: np.ndarray
    doc_ids: np.ndarray
    pos_rows: np.ndarray
    neg_rows: np.ndarray
    queries: np.ndarray
    docs: np.ndarray
    codes: np.ndarray
    recon: np.ndarray

    def __post_init__(self):
        b = self.query_ids.shape[0]
        if self.pos_rows.shape != (b,) or self.neg_rows.ndim != 2 or self.neg_rows.shape[0] != b:
            raise DimensionError("per-query positive/negative wiring does not match query count")
        if self.neg_rows.shape[1] < 1:
            raise ConfigurationError("every query needs at least one negative")
        if self.queries.shape != (b, self.docs.shape[1]):
            raise DimensionError("query matrix does not match document dimension")
        if self.codes.shape[0] != self.docs.shape[0] or self.recon.shape != self.docs.shape:
            raise DimensionError("codes/reconstructions do not match the distinct document rows")


@dataclass(frozen=True)
class Gradients:
    """Rotated-space batch gradients from one backward pass.

    `query_rows` and `doc_rows` are per-row gradients ready to chain
    through the rotation into encoder parameters; `doc_rows` already
    follows the straight-through policy. `codebook` matches the centroid
    array's (M, K, dim/M) shape, zero outside the codes used this step.
    """

    query_rows: np.ndarray
    doc_rows: np.ndarray
    recon_rows: np.ndarray
    codebook: np.ndarray


@dataclass(frozen=True)
class StepMetrics:
    """One metrics line per training step.

    `balance_violation` is the worst per-block deviation of the realized
    code histogram from the even share batch/K. `codes_changed` counts
    (document, block) cells whose code differs from before the step; it is
    zero by construction in stage 2.
    """

    step: int
    ranking_loss: float
    mse_loss: float
    total_loss: float
    balance_violation: float
    codes_changed: int

    def as_dict(self) -> dict:
        return {
            "step": self.step,
            "ranking_loss": self.ranking_loss,
            "mse_loss": self.mse_loss,
            "total_loss": self.total_loss,
            "balance_violation": self.balance_violation,
            "codes_changed": self.codes_changed,
        }


def ranking_loss(query: np.ndarray, positive: np.ndarray, negatives: np.ndarray) -> float:
    """Softmax cross-entropy of the positive among positive plus negatives.

    Scores are inner products. The log-sum-exp is max-shifted so large
    scores cannot overflow.
    """
    query = np.asarray(query, dtype=np.float64)
    positive = np.asarray(positive, dtype=np.float64)
    negatives = np.atleast_2d(np.asarray(negatives, dtype=np.float64))
    if negatives.shape[0] == 0:
        raise ConfigurationError("ranking loss needs at least one negative document")
    if query.ndim != 1 or positive.shape != query.shape or negatives.shape[1] != query.shape[0]:
        raise DimensionError(
            f"query {query.shape}, positive {positive.shape}, negatives {negatives.shape} disagree"
        )
    scores = np.concatenate(([query @ positive], negatives @ query))
    m = scores.max()
    return float(m + np.log(np.exp(scores - m).sum()) - scores[0])


def mse_loss(doc: np.ndarray, recon: np.ndarray) -> float:
    """Squared reconstruction error of one document, summed over coordinates."""
    doc = np.asarray(doc, dtype=np.float64)
    recon = np.asarray(recon, dtype=np.float64)
    if doc.shape != recon.shape or doc.ndim != 1:
        raise DimensionError(f"document {doc.shape} and reconstruction {recon.shape} disagree")
    diff = doc - recon
    return float(diff @ diff)


def _batch_scores(batch: TrainingBatch) -> tuple[np.ndarray, np.ndarray]:
    """Per-query scores against quantized docs: (positive (B,), negatives (B, n))."""
    s_pos = np.einsum("bd,bd->b", batch.queries, batch.recon[batch.pos_rows])
    s_neg = np.einsum("bd,bnd->bn", batch.queries, batch.recon[batch.neg_rows])
    return s_pos, s_neg


def _ranking_terms(batch: TrainingBatch) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-query loss rows and the softmax over (positive, negatives)."""
    s_pos, s_neg = _batch_scores(batch)
    all_scores = np.concatenate((s_pos[:, None], s_neg), axis=1)
    m = all_scores.max(axis=1, keepdims=True)
    z = np.exp(all_scores - m)
    denom = z.sum(axis=1)
    rows = m[:, 0] + np.log(denom) - s_pos
    p = z / denom[:, None]
    return rows, p[:, 0], p[:, 1:]


def total_loss(batch: TrainingBatch, mse_weight: float) -> float:
    """Mean ranking loss over queries plus weighted mean reconstruction
    error over the distinct documents of the batch."""
    rank_rows, _, _ = _ranking_terms(batch)
    diff = batch.docs - batch.recon
    mse_rows = np.einsum("nd,nd->n", diff, diff)
    return float(rank_rows.mean() + mse_weight * mse_rows.mean())


def _gather_centroids(centroids: np.ndarray, codes: np.ndarray) -> np.ndarray:
    """Reconstructions (n, dim) for (n, M) codes from an (M, K, dim/M) array."""
    m = centroids.shape[0]
    picked = centroids[np.arange(m)[None, :], codes.astype(np.intp)]
    return picked.reshape(codes.shape[0], -1)


def backward(batch: TrainingBatch, centroids: np.ndarray, mse_weight: float) -> Gradients:
    """Analytic gradients of the batch loss under the assignment policy.

    Codes are fixed: the non-differentiable assignment contributes nothing.
    Raises ConsistencyError if the batch's reconstructions are stale, i.e.
    no longer the centroid gather of its codes.
    """
    if not np.array_equal(_gather_centroids(centroids, batch.codes), batch.recon):
        raise ConsistencyError(
            "batch reconstructions do not match its codes; rebuild the batch after updates"
        )
    num_q = batch.query_ids.shape[0]
    num_d, dim = batch.docs.shape

    _, p_pos, p_neg = _ranking_terms(batch)
    coef_pos = (p_pos - 1.0) / num_q
    coef_neg = p_neg / num_q

    g_query = coef_pos[:, None] * batch.recon[batch.pos_rows]
    g_query += np.einsum("bn,bnd->bd", coef_neg, batch.recon[batch.neg_rows])

    g_recon_rank = np.zeros((num_d, dim))
    np.add.at(g_recon_rank, batch.pos_rows, coef_pos[:, None] * batch.queries)
    np.add.at(
        g_recon_rank,
        batch.neg_rows.reshape(-1),
        (coef_neg[:, :, None] * batch.queries[:, None, :]).reshape(-1, dim),
    )

    pull = (2.0 * mse_weight / num_d) * (batch.docs - batch.recon)
    g_doc = g_recon_rank + pull
    g_recon = g_recon_rank - pull

    g_centroids = np.zeros_like(centroids)
    sub = dim // centroids.shape[0]
    for i in range(centroids.shape[0]):
        np.add.at(g_centroids[i], batch.codes[:, i].astype(np.intp), g_recon[:, i * sub : (i + 1) * sub])

    return Gradients(query_rows=g_query, doc_rows=g_doc, recon_rows=g_recon, codebook=g_centroids)


class TrainerState:
    """Mutable training state: encoders, centroid array, codes, pools.

    Centroids are float64 during training; `codebook()` snapshots them as
    the float32 structure the rest of the package consumes. `corpus_codes`
    tracks the current code of every document; stage 1 refreshes the rows
    touched by each batch, stage 2 never writes to it.
    """

    def __init__(
        self,
        doc_encoder,
        query_encoder,
        rotation: Rotation,
        centroids: np.ndarray,
        relevant: list[np.ndarray],
        corpus_codes: np.ndarray,
        negative_pools: list[np.ndarray] | None,
    ):
        self.doc_encoder = doc_encoder
        self.query_encoder = query_encoder
        self.rotation = rotation
        self.centroids = centroids
        self.relevant = relevant
        self.relevant_sets = [set(int(d) for d in r) for r in relevant]
        self.corpus_codes = corpus_codes
        self.negative_pools = negative_pools
        self.step = 0
        self.trainable_queries = np.array(
            [q for q in range(len(relevant)) if len(relevant[q]) > 0], dtype=np.intp
        )

    @property
    def num_docs(self) -> int:
        return self.doc_encoder.num_items

    @property
    def num_queries(self) -> int:
        return self.query_encoder.num_items

    def codebook(self) -> Codebook:
        return Codebook(self.centroids.astype(np.float32))


def encode_corpus(state: TrainerState) -> np.ndarray:
    """Nearest-centroid codes (never the balanced solver) for every document
    under the current encoder and centroids, shape (N, M) uint8."""
    docs = state.rotation.apply(state.doc_encoder.encode(np.arange(state.num_docs)))
    m, k, sub = state.centroids.shape
    codes = np.empty((docs.shape[0], m), dtype=np.uint8)
    for i in range(m):
        d2 = pairwise_sq_l2(docs[:, i * sub : (i + 1) * sub], state.centroids[i])
        codes[:, i] = d2.argmin(axis=1).astype(np.uint8)
    return codes


def mine_negatives(
    corpus_codes: np.ndarray,
    centroids: np.ndarray,
    rotation: Rotation,
    query_rows: np.ndarray,
    relevant_sets: list[set],
    pool_size: int = DEFAULT_NEGATIVE_POOL,
) -> list[np.ndarray]:
    """Hard-negative pools: the top-ranked irrelevant documents per query.

    Ranking scans every document's codes with the asymmetric lookup table
    for the given query representations and centroid values. The caller
    decides the staging: calling once with the initial model gives static
    pools that stay fixed through stage 1; calling every step with the
    current query encoder (codes held fixed) gives stage-2 dynamic mining.
    A pool can be shorter than `pool_size`, or empty when everything
    retrieved is relevant; samplers then fall back to uniform irrelevant
    picks.
    """
    q_rot = np.asarray(rotation.apply(query_rows), dtype=np.float64)
    m, k, sub = centroids.shape
    codes = corpus_codes.astype(np.intp)
    num_docs = codes.shape[0]
    scores = np.zeros((q_rot.shape[0], num_docs))
    tables = np.einsum("bmd,mkd->bmk", q_rot.reshape(-1, m, sub), centroids)
    for i in range(m):
        scores += tables[:, i, codes[:, i]]

    pools = []
    doc_index = np.arange(num_docs)
    for b in range(q_rot.shape[0]):
        order = np.lexsort((doc_index, -scores[b]))
        rel = relevant_sets[b]
        keep = order[~np.isin(order, list(rel), assume_unique=False)] if rel else order
        pools.append(keep[:pool_size].astype(np.intp))
    return pools


def _sample_irrelevant(rng: np.random.Generator, num_docs: int, rel: set, count: int) -> np.ndarray:
    """Uniform irrelevant document ids, the fallback when pools run dry."""
    if len(rel) >= num_docs:
        raise ConfigurationError("no irrelevant documents exist to use as negatives")
    picks = []
    while len(picks) < count:
        cand = int(rng.integers(num_docs))
        if cand not in rel:
            picks.append(cand)
    return np.array(picks, dtype=np.intp)


def _pick_negatives(
    rng: np.random.Generator, pool: np.ndarray, num_docs: int, rel: set, count: int
) -> np.ndarray:
    if len(pool) >= count:
        return rng.choice(pool, size=count, replace=False).astype(np.intp)
    extra = _sample_irrelevant(rng, num_docs, rel, count - len(pool))
    return np.concatenate((pool.astype(np.intp), extra))


def _assign_batch_codes(
    docs_rot: np.ndarray, state: TrainerState, config: TrainConfig
) -> tuple[np.ndarray, float]:
    """Codes for the batch's distinct documents plus the balance violation.

    Stage 1 reassigns per block, balanced via transport when `constrained`
    and by plain argmin otherwise. The violation reported is the realized
    one: worst deviation of any code count from the even share batch/K.
    """
    m, k, sub = state.centroids.shape
    n = docs_rot.shape[0]
    codes = np.empty((n, m), dtype=np.uint8)
    for i in range(m):
        with np.errstate(over="ignore", invalid="ignore"):
            cost = pairwise_sq_l2(docs_rot[:, i * sub : (i + 1) * sub], state.centroids[i])
        if not np.all(np.isfinite(cost)):
            raise DivergenceError(
                f"assignment costs became non-finite at step {state.step}"
            )
        if config.constrained:
            block_codes, _ = assign_constrained(
                cost, epsilon=config.epsilon, max_iters=config.max_iters, tol=config.tol
            )
        else:
            block_codes = cost.argmin(axis=1)
        codes[:, i] = block_codes.astype(np.uint8)
    violation = max(
        float(np.abs(np.bincount(codes[:, i], minlength=k) - n / k).max()) for i in range(m)
    )
    return codes, violation


def make_batch(state: TrainerState, config: TrainConfig) -> tuple[TrainingBatch, float]:
    """Sample one training batch and derive its codes and reconstructions.

    Returns the batch and its balance violation. Sampling is a pure
    function of (seed, step): queries without replacement, one positive
    each, negatives from the stage's pools with uniform irrelevant
    fallback.
    """
    if len(state.trainable_queries) == 0:
        raise ConfigurationError("no query has a relevant document; nothing to train on")
    rng = make_rng(config.seed, _STREAM_BATCH, state.step)
    take = min(config.batch_size, len(state.trainable_queries))
    q_ids = rng.choice(state.trainable_queries, size=take, replace=False).astype(np.intp)

    pos = np.array([rng.choice(state.relevant[q]) for q in q_ids], dtype=np.intp)

    if config.stage == 2:
        q_rows = state.query_encoder.encode(q_ids)
        pools = mine_negatives(
            state.corpus_codes,
            state.centroids,
            state.rotation,
            q_rows,
            [state.relevant_sets[q] for q in q_ids],
        )
    else:
        if state.negative_pools is None:
            raise ConfigurationError("stage 1 requires static negative pools; call init_state")
        pools = [state.negative_pools[q] for q in q_ids]

    negs = np.stack(
        [
            _pick_negatives(
                rng, pools[i], state.num_docs, state.relevant_sets[q], config.negatives_per_query
            )
            for i, q in enumerate(q_ids)
        ]
    )

    doc_ids = np.unique(np.concatenate((pos, negs.reshape(-1))))
    pos_rows = np.searchsorted(doc_ids, pos)
    neg_rows = np.searchsorted(doc_ids, negs)

    docs_rot = np.asarray(state.rotation.apply(state.doc_encoder.encode(doc_ids)), dtype=np.float64)
    queries_rot = np.asarray(state.rotation.apply(state.query_encoder.encode(q_ids)), dtype=np.float64)

    if config.stage == 2:
        codes = state.corpus_codes[doc_ids]
        k = state.centroids.shape[1]
        violation = max(
            float(np.abs(np.bincount(codes[:, i], minlength=k) - len(doc_ids) / k).max())
            for i in range(codes.shape[1])
        )
    else:
        codes, violation = _assign_batch_codes(docs_rot, state, config)

    recon = _gather_centroids(state.centroids, codes)
    batch = TrainingBatch(
        query_ids=q_ids,
        doc_ids=doc_ids,
        pos_rows=pos_rows,
        neg_rows=neg_rows,
        queries=queries_rot,
        docs=docs_rot,
        codes=codes,
        recon=recon,
    )
    return batch, violation


def _check_finite_scalar(value: float, component: str, step: int) -> float:
    if not np.isfinite(value):
        raise DivergenceError(f"{component} became non-finite at step {step}")
    return float(value)


def _check_finite_params(params: np.ndarray, component: str, step: int) -> None:
    if not np.all(np.isfinite(params)):
        raise DivergenceError(f"{component} became non-finite at step {step}")


def train_step(state: TrainerState, config: TrainConfig) -> StepMetrics:
    """One optimization step: sample, assign, differentiate, descend.

    Plain gradient descent with separate encoder/codebook learning rates;
    no momentum, so analytic gradients stay directly checkable. Stage 2
    leaves the document encoder and all corpus codes untouched. Any
    non-finite loss or parameter raises DivergenceError naming the
    component.
    """
    step = state.step
    batch, violation = make_batch(state, config)

    rank_rows, _, _ = _ranking_terms(batch)
    diff = batch.docs - batch.recon
    mse_rows = np.einsum("nd,nd->n", diff, diff)
    rank_mean = _check_finite_scalar(rank_rows.mean(), "ranking loss", step)
    mse_mean = _check_finite_scalar(mse_rows.mean(), "clustering loss", step)
    total = _check_finite_scalar(rank_mean + config.mse_weight * mse_mean, "total loss", step)

    grads = backward(batch, state.centroids, config.mse_weight)

    changed = int(np.count_nonzero(state.corpus_codes[batch.doc_ids] != batch.codes))
    if config.stage == 1:
        state.corpus_codes[batch.doc_ids] = batch.codes

    if config.lr_encoder > 0:
        g_q = state.rotation.apply_inverse(grads.query_rows)
        state.query_encoder.apply_gradient(batch.query_ids, g_q, config.lr_encoder)
        _check_finite_params(state.query_encoder.params, "query encoder parameters", step)
        if config.stage == 1:
            g_d = state.rotation.apply_inverse(grads.doc_rows)
            state.doc_encoder.apply_gradient(batch.doc_ids, g_d, config.lr_encoder)
            _check_finite_params(state.doc_encoder.params, "document encoder parameters", step)
    if config.lr_codebook > 0:
        state.centroids -= config.lr_codebook * grads.codebook
        _check_finite_params(state.centroids, "codebook centroids", step)

    state.step += 1
    return StepMetrics(
        step=step,
        ranking_loss=rank_mean,
        mse_loss=mse_mean,
        total_loss=total,
        balance_violation=violation,
        codes_changed=changed,
    )


def init_state(
    doc_encoder,
    query_encoder,
    rotation: Rotation,
    codebook: Codebook,
    relevant: list,
    config: TrainConfig,
    corpus_codes: np.ndarray | None = None,
) -> TrainerState:
    """Wire up a TrainerState from warmup artifacts and relevance lists.

    `relevant[q]` lists the relevant document ids of query q. Corpus codes
    come from `corpus_codes` when given (a stage-2 run must inherit its
    stage-1 checkpoint's codes verbatim) and are otherwise assigned fresh
    by nearest centroid. Stage-1 static negative pools are mined once here
    with this initial model.
    """
    if doc_encoder.dim_out != query_encoder.dim_out:
        raise DimensionError(
            f"document dim {doc_encoder.dim_out} != query dim {query_encoder.dim_out}"
        )
    if codebook.dim != doc_encoder.dim_out:
        raise DimensionError(
            f"codebook dim {codebook.dim} != encoder dim {doc_encoder.dim_out}"
        )
    if rotation.dim != doc_encoder.dim_out:
        raise DimensionError(f"rotation dim {rotation.dim} != encoder dim {doc_encoder.dim_out}")
    if len(relevant) != query_encoder.num_items:
        raise ConfigurationError(
            f"relevance lists cover {len(relevant)} queries, encoder has {query_encoder.num_items}"
        )

    rel_arrays = [np.asarray(sorted(int(d) for d in r), dtype=np.intp) for r in relevant]
    for q, arr in enumerate(rel_arrays):
        if len(arr) and (arr[0] < 0 or arr[-1] >= doc_encoder.num_items):
            raise ConfigurationError(f"query {q} lists a relevant document outside the corpus")

    centroids = codebook.centroids.astype(np.float64)
    state = TrainerState(
        doc_encoder=doc_encoder,
        query_encoder=query_encoder,
        rotation=rotation,
        centroids=centroids,
        relevant=rel_arrays,
        corpus_codes=np.zeros((doc_encoder.num_items, codebook.num_blocks), dtype=np.uint8),
        negative_pools=None,
    )
    if corpus_codes is not None:
        corpus_codes = np.asarray(corpus_codes, dtype=np.uint8)
        if corpus_codes.shape != (doc_encoder.num_items, codebook.num_blocks):
            raise DimensionError(
                f"corpus codes shape {corpus_codes.shape} does not cover "
                f"{doc_encoder.num_items} documents with {codebook.num_blocks} blocks"
            )
        if corpus_codes.size and int(corpus_codes.max()) >= codebook.num_centroids:
            raise ConfigurationError("corpus codes reference centroids outside the codebook")
        state.corpus_codes = corpus_codes.copy()
    else:
        state.corpus_codes = encode_corpus(state)

    if config.stage == 1:
        all_q = state.query_encoder.encode(np.arange(state.num_queries))
        state.negative_pools = mine_negatives(
            state.corpus_codes, state.centroids, state.rotation, all_q, state.relevant_sets
        )
    return state


def train_loop(state: TrainerState, config: TrainConfig, steps: int) -> list[StepMetrics]:
    """Run `steps` training steps, returning their metrics in order."""
    if steps < 0:
        raise ConfigurationError(f"steps must be >= 0, got {steps}")
    return [train_step(state, config) for _ in range(steps)]
