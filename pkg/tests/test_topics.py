from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from embedforge.errors import EmptyInput, SchemaViolation
from embedforge.topics import (
    LabeledQuery,
    TopicDistribution,
    fit_topic_distribution,
    load_labeled_queries,
    sample_topic_pair,
    worker_rng,
)


def lq(*topics):
    return LabeledQuery.ingest("q", [(t, 1.0 - 0.1 * i) for i, t in enumerate(topics)])


COUNTING = [lq("A", "B"), lq("A", "C"), lq("A", "B"), lq("D")]


class TestFit:
    def test_counting_example(self):
        d = fit_topic_distribution(COUNTING)
        assert d.p_t1 == pytest.approx({"A": 0.75, "D": 0.25})
        assert d.p_t2_given_t1["A"] == pytest.approx({"B": 2 / 3, "C": 1 / 3})
        assert d.singleton_mass == {"D": 1.0}
        assert d.taxonomy == ("A", "B", "C", "D")

    def test_counting_fixture_file(self, fixtures):
        d = fit_topic_distribution(load_labeled_queries(fixtures / "labeled_queries.jsonl"))
        assert d.to_json() == fit_topic_distribution(COUNTING).to_json()

    def test_single_sample(self):
        d = fit_topic_distribution([lq("A", "B")])
        assert d.p_t1 == {"A": 1.0}
        assert d.p_t2_given_t1 == {"A": {"B": 1.0}}

    def test_empty(self):
        with pytest.raises(EmptyInput):
            fit_topic_distribution([])

    def test_ingest_tie_break(self):
        q = LabeledQuery.ingest("q", [("b", 0.5), ("a", 0.5), ("c", 0.9)])
        assert [t for t, _ in q.labels] == ["c", "a", "b"]

    def test_invalid_scores(self):
        with pytest.raises(SchemaViolation):
            LabeledQuery("q", (("a", 1.5),))
        with pytest.raises(SchemaViolation):
            LabeledQuery("q", (("a", 0.2), ("b", 0.4)))

    def test_json_round_trip(self, tmp_path):
        d = fit_topic_distribution(COUNTING)
        d.save(tmp_path / "d.json")
        assert TopicDistribution.load(tmp_path / "d.json").to_json() == d.to_json()

    @given(st.lists(st.lists(st.sampled_from("ABCDE"), min_size=1, max_size=3, unique=True), min_size=1, max_size=20), st.randoms())
    def test_permutation_invariant(self, label_lists, rnd):
        samples = [lq(*ls) for ls in label_lists]
        shuffled = samples[:]
        rnd.shuffle(shuffled)
        a, b = fit_topic_distribution(samples), fit_topic_distribution(shuffled)
        assert a.p_t1 == pytest.approx(b.p_t1)
        for t in a.p_t2_given_t1:
            assert a.p_t2_given_t1[t] == pytest.approx(b.p_t2_given_t1[t])
        assert a.singleton_mass == pytest.approx(b.singleton_mass)

    @given(st.lists(st.lists(st.sampled_from("ABCDEFG"), min_size=1, max_size=4, unique=True), min_size=1, max_size=30))
    def test_fitted_tables_are_normalised(self, label_lists):
        d = fit_topic_distribution([lq(*ls) for ls in label_lists])
        assert sum(d.p_t1.values()) == pytest.approx(1.0, abs=1e-9)
        for t in d.p_t1:
            total = sum(d.p_t2_given_t1.get(t, {}).values()) + d.singleton_mass.get(t, 0.0)
            assert total == pytest.approx(1.0, abs=1e-9)


class TestSample:
    def test_degenerate(self):
        d = fit_topic_distribution([lq("A", "B")])
        rng = np.random.default_rng(0)
        assert {sample_topic_pair(d, rng) for _ in range(50)} == {("A", "B")}

    def test_marginal_within_bound(self):
        d = fit_topic_distribution(COUNTING)
        rng = np.random.default_rng(123)
        draws = [sample_topic_pair(d, rng) for _ in range(10_000)]
        freq_a = sum(t1 == "A" for t1, _ in draws) / len(draws)
        assert 0.73 <= freq_a <= 0.77
        assert all(t2 is None for t1, t2 in draws if t1 == "D")
        b_given_a = [t2 for t1, t2 in draws if t1 == "A"]
        sigma = np.sqrt((2 / 3) * (1 / 3) / len(b_given_a))
        assert abs(b_given_a.count("B") / len(b_given_a) - 2 / 3) < 3 * sigma

    def test_deterministic(self):
        d = fit_topic_distribution(COUNTING)
        a = [sample_topic_pair(d, np.random.default_rng(5)) for _ in range(3)]
        r1, r2 = np.random.default_rng(9), np.random.default_rng(9)
        assert [sample_topic_pair(d, r1) for _ in range(200)] == [sample_topic_pair(d, r2) for _ in range(200)]
        assert a[0] == a[1] == a[2]

    def test_worker_streams_differ(self):
        a = worker_rng(7, 0).random(4)
        b = worker_rng(7, 1).random(4)
        assert not np.array_equal(a, b)
        np.testing.assert_array_equal(a, worker_rng(7, 0).random(4))

    def test_small_taxonomy_l1_convergence(self):
        p = {"a": 0.4, "b": 0.3, "c": 0.15, "d": 0.1, "e": 0.05}
        d = TopicDistribution(tuple(p), p, {}, {t: 1.0 for t in p})
        rng = np.random.default_rng(2024)
        n = 100_000
        counts = Counter(sample_topic_pair(d, rng)[0] for _ in range(n))
        l1 = sum(abs(counts[t] / n - p[t]) for t in p)
        assert l1 < 0.01

    def test_large_taxonomy_per_topic_bounds(self):
        # 1091 topics, Zipf-shaped; each marginal within a 4.5 sigma binomial band
        k = 1091
        w = 1.0 / np.arange(1, k + 1)
        w /= w.sum()
        names = [f"t{i:04d}" for i in range(k)]
        p = dict(zip(names, w.tolist()))
        p[names[-1]] += 1.0 - sum(p.values())
        d = TopicDistribution(tuple(names), p, {}, {t: 1.0 for t in names})
        rng = np.random.default_rng(11)
        n = 100_000
        counts = Counter(sample_topic_pair(d, rng)[0] for _ in range(n))
        for t in names:
            sigma = np.sqrt(p[t] * (1 - p[t]) / n)
            assert abs(counts[t] / n - p[t]) <= 4.5 * sigma + 1e-12
