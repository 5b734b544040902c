"""Joint training of encoders and codebook, with and without balance.

Starts from a deliberately short warmup (some centroids never win a row,
so plain nearest-centroid assignment can never revive them), then trains
the same data twice: once assigning codes by argmin, once through the
balanced transport assigner. Compares retrieval quality and code usage.

Run: python3 demos/joint_training.py
"""

import numpy as np

from conquant.evaluation import code_balance, mrr_at_k
from conquant.ivf import build_ivf, search
from conquant.opq import train_opq
from conquant.synthetic import SyntheticSpec, generate
from conquant.training import (
    EmbeddingTableEncoder,
    TrainConfig,
    encode_corpus,
    init_state,
    train_loop,
)

BLOCKS, CENTROIDS, STEPS = 4, 16, 200


def mrr_of(state, bench):
    index = build_ivf(state.doc_encoder.params, state.codebook(), state.rotation, n=16, seed=0)
    rankings = {}
    for i in range(state.query_encoder.num_items):
        row = state.query_encoder.params[i]
        rankings[f"q{i}"] = [d for d, _ in search(index, row, topk=10)]
    return mrr_at_k(rankings, bench.qrels(), 10)


def run(bench, rotation, codebook, constrained):
    config = TrainConfig(
        mse_weight=0.3,
        lr_encoder=0.05,
        lr_codebook=0.05,
        batch_size=128,
        stage=1,
        negatives_per_query=4,
        constrained=constrained,
        seed=0,
    )
    state = init_state(
        EmbeddingTableEncoder(bench.docs),
        EmbeddingTableEncoder(bench.queries),
        rotation,
        codebook,
        bench.relevant,
        config,
    )
    metrics = train_loop(state, config, STEPS)
    return state, metrics


def main():
    bench = generate(SyntheticSpec(num_docs=6000, num_queries=400, seed=0))
    print(f"corpus: {bench.docs.shape[0]} docs, {bench.queries.shape[0]} queries")

    rotation, codebook = train_opq(
        bench.docs, num_blocks=BLOCKS, num_centroids=CENTROIDS,
        outer_iters=1, inner_iters=3, seed=0, restarts=1,
    )
    warm_codes = encode_corpus(
        init_state(
            EmbeddingTableEncoder(bench.docs),
            EmbeddingTableEncoder(bench.queries),
            rotation,
            codebook,
            bench.relevant,
            TrainConfig(mse_weight=0.3, seed=0),
        )
    )
    warm = code_balance(warm_codes, CENTROIDS)
    print(f"after short warmup: mean code entropy {warm.mean_entropy:.3f} "
          f"(max {np.log2(CENTROIDS):.3f}), busiest code holds {warm.top_code_fraction:.1%}")
    print()

    for label, constrained in (("argmin assignment", False), ("balanced assignment", True)):
        state, metrics = run(bench, rotation, codebook, constrained)
        bal = code_balance(state.corpus_codes, CENTROIDS)
        print(f"{label}: {STEPS} steps")
        print(f"  ranking loss {metrics[0].ranking_loss:.4f} -> {metrics[-1].ranking_loss:.4f}")
        print(f"  mean code entropy {bal.mean_entropy:.4f}, busiest code {bal.top_code_fraction:.2%}")
        print(f"  MRR@10 {mrr_of(state, bench):.4f}")
        print()

    print("on any single seed the MRR difference sits inside run-to-run noise; the")
    print("reliable effect is the flatter usage histogram, which keeps every")
    print("inverted list useful once the index is built. For the quality story run")
    print("evaluation.run_ablation, which reports 5-seed medians up the feature ladder.")


if __name__ == "__main__":
    main()
