import json

import httpx
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from embedforge.dataset_io import Triplet
from embedforge.errors import ScoreOutOfRange, TransportError
from embedforge.filtering import (
    REJECT_NON_POSITIVE,
    REJECT_TOO_WIDE,
    FilterConfig,
    HttpReranker,
    RerankScore,
    ScoreCache,
    filter_triplets,
    load_scores,
    score_triplets,
)


class JaccardScorer:
    def __init__(self):
        self.calls = []

    def score(self, query, documents):
        self.calls.append((query, tuple(documents)))
        q = set(query.split())
        return [len(q & set(d.split())) / len(q | set(d.split())) for d in documents]


class ConstScorer:
    def __init__(self, value):
        self.value = value

    def score(self, query, documents):
        return [self.value] * len(documents)


class TestScore:
    def test_jaccard_example(self):
        t = Triplet("t1", "short-long", "a b", "a b c", "x y")
        (s,) = score_triplets([t], JaccardScorer())
        assert s.s_pos == pytest.approx(2 / 3)
        assert s.s_neg == 0.0

    def test_out_of_range(self):
        with pytest.raises(ScoreOutOfRange):
            score_triplets([Triplet("t1", "short-long", "q", "p", "n")], ConstScorer(1.2))
        with pytest.raises(ScoreOutOfRange):
            RerankScore("x", 0.5, -0.1)

    def test_cache_hit(self):
        scorer = JaccardScorer()
        t = Triplet("t1", "short-long", "a b", "a b c", "x y")
        t2 = Triplet("t2", "short-long", "a b", "a b c", "x y")
        cache = ScoreCache()
        score_triplets([t, t2], scorer, cache)
        assert len(scorer.calls) == 1
        assert len(cache) == 2

    def test_each_pair_scored_once(self):
        scorer = JaccardScorer()
        trips = [Triplet("t1", "short-long", "q", "p", "n"), Triplet("t2", "short-long", "q", "p", "m")]
        score_triplets(trips, scorer)
        scored = [(q, d) for q, docs in scorer.calls for d in docs]
        assert sorted(scored) == [("q", "m"), ("q", "n"), ("q", "p")]

    def test_cache_file_persists(self, tmp_path):
        t = Triplet("t1", "short-long", "a b", "a b c", "x y")
        score_triplets([t], JaccardScorer(), ScoreCache(tmp_path / "c.json"))
        scorer = JaccardScorer()
        score_triplets([t], scorer, ScoreCache(tmp_path / "c.json"))
        assert scorer.calls == []

    def test_sts_skipped(self):
        t = Triplet("s", "sts", "a", "b", "c", high_score=4.0, low_score=3.0)
        assert score_triplets([t], JaccardScorer()) == []


class TestHttpReranker:
    def test_round_trip(self):
        seen = {}

        def handler(request):
            seen.update(json.loads(request.content))
            return httpx.Response(200, json={"scores": [0.9, 0.2]})

        rr = HttpReranker("http://rr/score", httpx.Client(transport=httpx.MockTransport(handler)), api_key="k")
        assert rr.score("q", ["a", "b"]) == [0.9, 0.2]
        assert seen == {"query": "q", "documents": ["a", "b"]}

    @pytest.mark.parametrize("resp", [httpx.Response(503), httpx.Response(200, json={"scores": [0.1]})])
    def test_errors(self, resp):
        rr = HttpReranker("http://rr", httpx.Client(transport=httpx.MockTransport(lambda r: resp)), api_key="")
        with pytest.raises(TransportError):
            rr.score("q", ["a", "b"])


class TestFilter:
    @pytest.mark.parametrize(
        "s_pos,s_neg,reason",
        [(0.80, 0.30, None), (0.99, 0.01, REJECT_TOO_WIDE), (0.40, 0.50, REJECT_NON_POSITIVE), (0.5, 0.5, REJECT_NON_POSITIVE)],
    )
    def test_examples(self, s_pos, s_neg, reason):
        kept, rejected = filter_triplets([RerankScore("t", s_pos, s_neg)], FilterConfig(0.96))
        if reason is None:
            assert kept == ["t"] and rejected == []
        else:
            assert kept == [] and rejected == [("t", reason)]

    def test_boundary_rejects(self):
        kept, rejected = filter_triplets([RerankScore("t", 1.0, 0.5)], FilterConfig(0.5))
        assert rejected == [("t", REJECT_TOO_WIDE)]

    def test_default_c(self):
        assert FilterConfig().threshold_c == 0.96
        with pytest.raises(ValueError):
            FilterConfig(0.0)

    def test_fixture(self, fixtures):
        kept, rejected = filter_triplets(load_scores(fixtures / "filter" / "scores.jsonl"))
        assert len(kept) == 7 and len(rejected) == 3


unit = st.floats(0, 1, allow_nan=False)
score_lists = st.lists(st.tuples(unit, unit), max_size=40)


def _scores(pairs):
    return [RerankScore(f"t{i}", a, b) for i, (a, b) in enumerate(pairs)]


@given(score_lists, st.floats(0.01, 1.0), st.randoms())
def test_partition_idempotent_order_independent(pairs, c, rnd):
    scores = _scores(pairs)
    cfg = FilterConfig(c)
    kept, rejected = filter_triplets(scores, cfg)
    ids = {s.id for s in scores}
    assert set(kept) | {i for i, _ in rejected} == ids
    assert not set(kept) & {i for i, _ in rejected}
    again, _ = filter_triplets([s for s in scores if s.id in set(kept)], cfg)
    assert again == kept
    shuffled = scores[:]
    rnd.shuffle(shuffled)
    assert set(filter_triplets(shuffled, cfg)[0]) == set(kept)


@given(score_lists, st.lists(st.floats(0.01, 1.0), min_size=2, max_size=6))
def test_monotone_in_c(pairs, cs):
    scores = _scores(pairs)
    prev = set()
    for c in sorted(cs):
        kept = set(filter_triplets(scores, FilterConfig(c))[0])
        assert prev <= kept
        prev = kept


def test_plausibility_acceptance_rate():
    """On a polarised mock distribution roughly 70% survive, as in the original campaign."""
    rng = np.random.default_rng(0)
    n = 20_000
    easy = rng.random(n) < 0.2
    s_pos = np.where(easy, rng.uniform(0.985, 1.0, n), rng.beta(5, 2, n))
    s_neg = np.where(easy, rng.uniform(0.0, 0.015, n), rng.beta(2, 3, n))
    kept, _ = filter_triplets(_scores(zip(s_pos.tolist(), s_neg.tolist())))
    assert 0.6 < len(kept) / n < 0.8
