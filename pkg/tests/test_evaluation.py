import numpy as np
import numpy.testing as npt
import pytest

from conquant.errors import ConfigurationError
from conquant.evaluation import (
    ABLATION_RUNGS,
    MetricReport,
    code_balance,
    evaluate_rankings,
    mrr_at_k,
    rank_codes,
    recall_at_k,
    run_ablation,
    score_codes,
)
from conquant.synthetic import SyntheticSpec, generate


class TestSynthetic:
    def test_shapes_and_dtypes(self):
        bench = generate(SyntheticSpec(num_docs=200, dim=8, num_clusters=5, num_queries=20))
        assert bench.docs.shape == (200, 8) and bench.docs.dtype == np.float32
        assert bench.queries.shape == (20, 8) and bench.queries.dtype == np.float32
        assert bench.query_sources.shape == (20,)

    def test_deterministic(self):
        spec = SyntheticSpec(num_docs=100, dim=4, num_clusters=3, num_queries=10, seed=9)
        a, b = generate(spec), generate(spec)
        npt.assert_array_equal(a.docs, b.docs)
        npt.assert_array_equal(a.queries, b.queries)
        npt.assert_array_equal(a.query_sources, b.query_sources)

    def test_seed_changes_corpus(self):
        base = SyntheticSpec(num_docs=100, dim=4, num_clusters=3, num_queries=10)
        a = generate(base)
        b = generate(SyntheticSpec(num_docs=100, dim=4, num_clusters=3, num_queries=10, seed=1))
        assert not np.array_equal(a.docs, b.docs)

    def test_query_sources_distinct(self):
        bench = generate(SyntheticSpec(num_docs=50, dim=4, num_clusters=2, num_queries=50))
        assert len(set(bench.query_sources.tolist())) == 50

    def test_zero_noise_copies_documents(self):
        bench = generate(SyntheticSpec(num_docs=60, dim=4, num_clusters=2, num_queries=6, noise=0.0))
        npt.assert_array_equal(bench.queries, bench.docs[bench.query_sources])

    def test_relevance_structure(self):
        bench = generate(SyntheticSpec(num_docs=40, dim=4, num_clusters=2, num_queries=4))
        assert bench.relevant == [[int(s)] for s in bench.query_sources]
        qrels = bench.qrels()
        assert qrels[f"q{0}"] == {int(bench.query_sources[0]): 1}

    def test_invalid_specs_rejected(self):
        with pytest.raises(ConfigurationError):
            SyntheticSpec(num_docs=5, num_clusters=10)
        with pytest.raises(ConfigurationError):
            SyntheticSpec(num_docs=10, num_clusters=2, num_queries=11)
        with pytest.raises(ConfigurationError):
            SyntheticSpec(noise=-0.1)


class TestRankingMetrics:
    def test_relevant_always_first(self):
        rankings = {q: [q * 10, 1, 2] for q in range(5)}
        qrels = {q: {q * 10: 1} for q in range(5)}
        assert mrr_at_k(rankings, qrels, 10) == 1.0

    def test_relevant_beyond_cutoff_scores_zero(self):
        rankings = {0: [1, 2, 3, 99]}
        qrels = {0: {99: 1}}
        assert mrr_at_k(rankings, qrels, 3) == 0.0

    def test_hand_computed_mixture(self):
        rankings = {"a": [5, 7, 9], "b": [1, 2, 3, 4, 8]}
        qrels = {"a": {7: 1}, "b": {8: 1}}
        assert mrr_at_k(rankings, qrels, 10) == pytest.approx((0.5 + 0.2) / 2)

    def test_unjudged_query_excluded(self):
        rankings = {"a": [7], "b": [8]}
        qrels = {"a": {7: 1}}
        assert mrr_at_k(rankings, qrels, 10) == 1.0

    def test_zero_grade_counts_as_unjudged(self):
        rankings = {"a": [7], "b": [8]}
        qrels = {"a": {7: 1}, "b": {8: 0}}
        assert mrr_at_k(rankings, qrels, 10) == 1.0
        assert recall_at_k(rankings, qrels, 10) == 1.0

    def test_recall_extremes(self):
        rankings = {0: [1, 2, 3]}
        assert recall_at_k(rankings, {0: {1: 1, 2: 1}}, 10) == 1.0
        assert recall_at_k(rankings, {0: {8: 1, 9: 1}}, 10) == 0.0
        assert recall_at_k(rankings, {0: {1: 1, 9: 1}}, 10) == 0.5

    def test_recall_respects_cutoff(self):
        rankings = {0: [1, 2, 3, 4]}
        assert recall_at_k(rankings, {0: {4: 1}}, 3) == 0.0
        assert recall_at_k(rankings, {0: {4: 1}}, 4) == 1.0

    def test_no_judged_queries_gives_zero(self):
        assert mrr_at_k({"a": [1]}, {}, 10) == 0.0
        assert recall_at_k({"a": [1]}, {}, 10) == 0.0

    def test_bad_cutoff_rejected(self):
        with pytest.raises(ConfigurationError):
            mrr_at_k({}, {}, 0)
        with pytest.raises(ConfigurationError):
            recall_at_k({}, {}, -1)


def naive_mrr(rankings, qrels, k):
    values = []
    for q, docs in rankings.items():
        relevant = {d for d, g in qrels.get(q, {}).items() if g > 0}
        if not relevant:
            continue
        rr = 0.0
        for i, d in enumerate(list(docs)[:k]):
            if d in relevant:
                rr = 1.0 / (i + 1)
                break
        values.append(rr)
    return sum(values) / len(values) if values else 0.0


def naive_recall(rankings, qrels, k):
    values = []
    for q, docs in rankings.items():
        relevant = {d for d, g in qrels.get(q, {}).items() if g > 0}
        if not relevant:
            continue
        values.append(len(relevant & set(list(docs)[:k])) / len(relevant))
    return sum(values) / len(values) if values else 0.0


class TestNaiveReferenceEquality:
    def test_hundred_random_fixtures_match_exactly(self):
        rng = np.random.default_rng(42)
        for trial in range(100):
            num_q = int(rng.integers(1, 8))
            num_docs = int(rng.integers(3, 30))
            k = int(rng.integers(1, 15))
            rankings = {}
            qrels = {}
            for q in range(num_q):
                depth = int(rng.integers(1, num_docs + 1))
                rankings[q] = rng.permutation(num_docs)[:depth].tolist()
                if rng.random() < 0.8:
                    judged = rng.permutation(num_docs)[: int(rng.integers(1, 5))]
                    qrels[q] = {int(d): int(rng.integers(0, 3)) for d in judged}
            assert mrr_at_k(rankings, qrels, k) == naive_mrr(rankings, qrels, k)
            assert recall_at_k(rankings, qrels, k) == naive_recall(rankings, qrels, k)


class TestCodeBalance:
    def test_single_code_has_zero_entropy(self):
        codes = np.zeros((50, 3), dtype=np.uint8)
        bal = code_balance(codes, 8)
        assert bal.mean_entropy == 0.0
        assert bal.top_code_fraction == 1.0

    def test_uniform_usage_hits_log2k(self):
        codes = np.tile(np.arange(8, dtype=np.uint8)[:, None], (4, 2))
        bal = code_balance(codes, 8)
        assert bal.mean_entropy == pytest.approx(3.0)
        assert bal.top_code_fraction == pytest.approx(1 / 8)

    def test_known_distribution(self):
        # usage (1/2, 1/4, 1/8, 1/8) has entropy 1.75 bits
        codes = np.array([0] * 4 + [1] * 2 + [2] + [3], dtype=np.uint8)[:, None]
        bal = code_balance(codes, 4)
        assert bal.mean_entropy == pytest.approx(1.75)

    def test_label_permutation_invariance(self):
        rng = np.random.default_rng(3)
        codes = rng.integers(0, 6, size=(200, 4)).astype(np.uint8)
        perm = rng.permutation(6).astype(np.uint8)
        bal = code_balance(codes, 6)
        bal_p = code_balance(perm[codes], 6)
        assert bal.mean_entropy == pytest.approx(bal_p.mean_entropy, abs=1e-12)
        npt.assert_allclose(bal.mean_sorted_frequencies, bal_p.mean_sorted_frequencies)

    def test_counts_account_for_every_document(self):
        rng = np.random.default_rng(4)
        codes = rng.integers(0, 5, size=(73, 3)).astype(np.uint8)
        bal = code_balance(codes, 5)
        npt.assert_array_equal(bal.counts.sum(axis=1), [73, 73, 73])

    def test_entropy_bounexcept_range(self):
        rng = np.random.default_rng(5)
        codes = rng.integers(0, 16, size=(300, 2)).astype(np.uint8)
        bal = code_balance(codes, 16)
        assert 0.0 <= bal.mean_entropy <= 4.0 + 1e-12

    def test_empty_codes_rejected(self):
        with pytest.raises(ConfigurationError):
            code_balance(np.zeros((0, 2), dtype=np.uint8), 4)

    def test_out_of_range_codes_rejected(self):
        with pytest.raises(ConfigurationError):
            code_balance(np.array([[9]], dtype=np.uint8), 4)


class TestMetricReport:
    def make_report(self, **overrides):
        codes = np.array([[0, 1], [1, 0], [2, 3]], dtype=np.uint8)
        defaults = dict(
            mrr={10: 0.5},
            recall={10: 0.75},
            balance=code_balance(codes, 4),
            queries_evaluated=4,
            queries_skipped=1,
            mean_distortion=2.5,
        )
        defaults.update(overrides)
        return MetricReport(**defaults)

    def test_csv_round_trip(self):
        csv = self.make_report().as_csv()
        lines = csv.strip().split("\n")
        assert lines[0] == "metric,value"
        fields = dict(line.split(",") for line in lines[1:])
        assert float(fields["mrr@10"]) == 0.5
        assert float(fields["recall@10"]) == 0.75
        assert float(fields["mean_distortion"]) == 2.5
        assert int(fields["queries_evaluated"]) == 4
        assert int(fields["queries_skipped"]) == 1

    def test_table_mentions_every_metric(self):
        table = self.make_report().as_table()
        for needle in ("MRR@10", "Recall@10", "entropy", "Queries evaluated"):
            assert needle.lower() in table.lower()

    def test_distortion_optional(self):
        csv = self.make_report(mean_distortion=None).as_csv()
        assert "mean_distortion" not in csv

    def test_out_of_range_metric_rejected(self):
        with pytest.raises(ConfigurationError):
            self.make_report(mrr={10: 1.5})


class TestScoring:
    def setup_method(self):
        rng = np.random.default_rng(6)
        self.centroids = rng.standard_normal((2, 4, 3))
        self.codes = rng.integers(0, 4, size=(40, 2)).astype(np.uint8)
        self.queries = rng.standard_normal((7, 6))

    def brute_scores(self):
        recon = np.concatenate(
            (self.centroids[0][self.codes[:, 0]], self.centroids[1][self.codes[:, 1]]), axis=1
        )
        return self.queries @ recon.T

    def test_score_codes_matches_reconstruction_inner_products(self):
        npt.assert_allclose(score_codes(self.queries, self.codes, self.centroids), self.brute_scores(), rtol=1e-12)

    def test_rank_codes_matches_lexsort_reference(self):
        got = rank_codes(self.queries, self.codes, self.centroids, topk=10)
        scores = self.brute_scores()
        for r in range(7):
            want = np.lexsort((np.arange(40), -scores[r]))[:10]
            npt.assert_array_equal(got[r], want)

    def test_chunking_does_not_change_results(self):
        a = rank_codes(self.queries, self.codes, self.centroids, topk=5, chunk=2)
        b = rank_codes(self.queries, self.codes, self.centroids, topk=5, chunk=1000)
        npt.assert_array_equal(a, b)

    def test_topk_clamped_to_corpus(self):
        got = rank_codes(self.queries, self.codes, self.centroids, topk=500)
        assert got.shape == (7, 40)

    def test_tied_scores_prefer_lower_doc_id(self):
        centroids = np.ones((1, 2, 2))
        codes = np.array([[0], [1], [0]], dtype=np.uint8)
        got = rank_codes(np.ones((1, 2)), codes, centroids, topk=3)
        npt.assert_array_equal(got[0], [0, 1, 2])


class TestEvaluateRankings:
    def test_bundles_metrics_and_counts(self):
        rankings = {"a": [1, 2], "b": [3, 4], "c": [5]}
        qrels = {"a": {1: 1}, "b": {9: 1}}
        codes = np.array([[0], [1], [1]], dtype=np.uint8)
        report = evaluate_rankings(rankings, qrels, codes, 2, cutoffs=(1, 2))
        assert report.mrr[1] == pytest.approx(0.5)
        assert report.queries_evaluated == 2
        assert report.queries_skipped == 1
        assert report.mean_distortion is None


class TestAblationSmoke:
    def test_single_seed_ladder_completes(self):
        spec = SyntheticSpec(num_docs=400, dim=8, num_clusters=8, num_queries=60, seed=0)
        notes = []
        table = run_ablation(
            spec,
            seeds=[0],
            num_blocks=2,
            num_centroids=4,
            steps_stage1=40,
            steps_stage2=20,
            batch_size=32,
            opq_outer=3,
            opq_restarts=1,
            progress=notes.append,
        )
        assert [r.name for r in table.rungs] == list(ABLATION_RUNGS)
        for rung in table.rungs:
            assert len(rung.per_seed) == 1
            assert 0.0 <= rung.median <= 1.0
        assert len(notes) == 4
        csv = table.as_csv()
        assert csv.startswith("rung,seed0,median")
        assert csv.count("\n") == 5
