import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from embedforge.dataset_io import write_jsonl
from embedforge.errors import EmptyEligible, PositiveMissing
from embedforge.mining import MiningParams, mine_hard_negatives, mine_run, read_run


def oracle_eligible(scores, positive, top_n, window, judged=()):
    """Direct sort, population std by the textbook formula, inequality filter."""
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    top = [v for _, v in ranked[:top_n]]
    mean = sum(top) / len(top)
    sigma = math.sqrt(sum((v - mean) ** 2 for v in top) / len(top))
    cut = scores[positive] - sigma
    skip = set(judged) | {positive}
    return sigma, [d for d, v in ranked[:window] if v <= cut and d not in skip]


class TestExamples:
    SCORES = {"d+": 0.9, "a": 0.85, "b": 0.7, "c": 0.5}

    def test_worked_example(self):
        m = mine_hard_negatives(self.SCORES, "d+", MiningParams(), np.random.default_rng(4))
        # population std of (0.9, 0.85, 0.7, 0.5) = sqrt(0.096875 / 4)
        assert m.sigma == pytest.approx(math.sqrt(0.096875 / 4), abs=1e-12)
        assert m.sigma == pytest.approx(0.15563, abs=1e-5)
        assert m.eligible == ("b", "c")
        assert len(m.sampled) == 1 and m.sampled[0] in {"b", "c"}
        want = ("b", "c")[int(np.random.default_rng(4).choice(2, size=1, replace=False)[0])]
        assert m.sampled == (want,)

    def test_deterministic(self):
        runs = {mine_hard_negatives(self.SCORES, "d+", MiningParams(), np.random.default_rng(s)).sampled for s in [7, 7]}
        assert len(runs) == 1

    def test_all_equal_scores(self):
        scores = {f"d{i}": 0.5 for i in range(6)}
        m = mine_hard_negatives(scores, "d3", MiningParams(negatives_per_query=10), np.random.default_rng(0))
        assert m.sigma == 0.0
        assert m.eligible == ("d0", "d1", "d2", "d4", "d5")
        assert set(m.sampled) == set(m.eligible)

    def test_only_positive(self):
        with pytest.raises(EmptyEligible):
            mine_hard_negatives({"d+": 1.0}, "d+", MiningParams(), np.random.default_rng(0))

    def test_positive_missing(self):
        with pytest.raises(PositiveMissing):
            mine_hard_negatives({"a": 1.0}, "d+", MiningParams(), np.random.default_rng(0))

    def test_judged_docs_excluded(self):
        scores = {"p": 0.9, "q": 0.2, "x": 0.1, "y": 0.0}
        m = mine_hard_negatives(scores, "p", MiningParams(negatives_per_query=5), np.random.default_rng(0), judged={"p", "q"})
        assert "q" not in m.eligible

    def test_window_limits_candidates(self):
        scores = {f"d{i:02d}": 1.0 - i / 100 for i in range(50)}
        m = mine_hard_negatives(scores, "d00", MiningParams(candidate_window_k=10, top_n_for_sigma=5), np.random.default_rng(0))
        assert set(m.eligible) <= {f"d{i:02d}" for i in range(10)}

    def test_boundary_score_is_eligible(self):
        # top-2 scores (1.0, 0.5) give sigma 0.25; "edge" sits exactly at 0.5 - 0.25
        scores = {"a": 1.0, "b": 0.5, "p": 0.5, "edge": 0.25, "z": 0.0}
        params = MiningParams(top_n_for_sigma=2)
        m = mine_hard_negatives(scores, "p", params, np.random.default_rng(0))
        assert m.sigma == 0.25
        assert m.eligible == ("edge", "z")

    def test_invalid_params(self):
        with pytest.raises(ValueError):
            MiningParams(candidate_window_k=0)


@st.composite
def instances(draw):
    n = draw(st.integers(1, 50))
    vals = draw(st.lists(st.sampled_from([round(x * 0.05, 2) for x in range(21)]) | st.floats(0, 1), min_size=n, max_size=n))
    scores = {f"d{i:02d}": v for i, v in enumerate(vals)}
    pos = draw(st.sampled_from(sorted(scores)))
    top_n = draw(st.integers(1, 60))
    window = draw(st.integers(1, 60))
    judged = draw(st.sets(st.sampled_from(sorted(scores)), max_size=3))
    return scores, pos, top_n, window, judged


@given(instances(), st.integers(0, 2**16))
def test_matches_brute_force_oracle(inst, seed):
    scores, pos, top_n, window, judged = inst
    sigma, want = oracle_eligible(scores, pos, top_n, window, judged)
    params = MiningParams(top_n_for_sigma=top_n, candidate_window_k=window, negatives_per_query=2)
    try:
        m = mine_hard_negatives(scores, pos, params, np.random.default_rng(seed), judged=judged)
    except EmptyEligible:
        assert want == []
        return
    assert m.sigma == pytest.approx(sigma, abs=1e-12)
    assert list(m.eligible) == want
    assert set(m.sampled) <= set(m.eligible) and len(m.sampled) == min(2, len(want))
    # the ignore margin is empty
    assert not any(scores[pos] - m.sigma < scores[d] < scores[pos] for d in m.eligible)
    assert pos not in m.eligible


@given(instances(), st.floats(0.1, 10), st.floats(-5, 5))
def test_affine_invariance(inst, slope, offset):
    scores, pos, top_n, window, judged = inst
    params = MiningParams(top_n_for_sigma=top_n, candidate_window_k=window)
    moved = {d: slope * v + offset for d, v in scores.items()}
    # the transform must keep distinct scores distinct in floating point
    assume(len(set(moved.values())) == len(set(scores.values())))

    def eligible(s):
        try:
            return mine_hard_negatives(s, pos, params, np.random.default_rng(0), judged=judged).eligible
        except EmptyEligible:
            return ()

    # ties at the boundary can flip under floating point rescaling; compare away from it
    base = eligible(scores)
    sigma, _ = oracle_eligible(scores, pos, top_n, window)
    near = {d for d, v in scores.items() if abs(v - (scores[pos] - sigma)) < 1e-9}
    assert set(base) - near == set(eligible(moved)) - near


class TestRunIO:
    def test_read_and_mine(self, tmp_path):
        run = tmp_path / "run.tsv"
        run.write_text("q1\td+\t0.9\nq1\ta\t0.85\nq1\tb\t0.7\nq1\tc\t0.5\nq2\tx\t0.3\n")
        parsed = read_run(run)
        assert parsed["q1"]["b"] == 0.7
        mined = list(mine_run(parsed, {"q1": {"d+": 1}, "q2": {"x": 1}}, MiningParams(seed=3)))
        assert [m.query_id for m in mined] == ["q1"]  # q2 has nothing eligible and is skipped
        rec = mined[0].to_record()
        assert set(rec) == {"qid", "pos", "negs", "sigma"}
        write_jsonl(tmp_path / "o.jsonl", [rec])
