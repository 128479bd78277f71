"""Margin-based hard-negative mining over teacher similarity scores.

For one query the teacher's scores are ranked, sigma is the population
standard deviation of the top ``top_n_for_sigma`` scores, and a candidate in
the top ``candidate_window_k`` is eligible only when its score is at most
``S(positive) - sigma``. Judged-relevant documents are never eligible.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np

from .errors import EmptyEligible, PositiveMissing, SchemaViolation

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MiningParams:
    top_n_for_sigma: int = 1000
    candidate_window_k: int = 100
    negatives_per_query: int = 1
    seed: int = 0

    def __post_init__(self):
        for name in ("top_n_for_sigma", "candidate_window_k", "negatives_per_query"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be a positive integer")


@dataclass(frozen=True)
class MinedNegatives:
    query_id: str
    positive: str
    sigma: float
    eligible: tuple[str, ...]
    sampled: tuple[str, ...]

    def to_record(self) -> dict:
        return {"qid": self.query_id, "pos": self.positive, "negs": list(self.sampled), "sigma": self.sigma}


def rank_scores(scores: Mapping[str, float]) -> tuple[list[str], np.ndarray]:
    """Doc ids by descending score, ties by ascending id."""
    ids = sorted(scores)
    vals = np.array([scores[d] for d in ids], dtype=np.float64)
    order = np.argsort(-vals, kind="stable")
    return [ids[i] for i in order], vals[order]


def mine_hard_negatives(
    scores: Mapping[str, float],
    positive: str,
    params: MiningParams,
    rng: np.random.Generator,
    judged: Iterable[str] = (),
    query_id: str = "",
) -> MinedNegatives:
    if positive not in scores:
        raise PositiveMissing(f"positive {positive!r} has no teacher score")
    ranked, vals = rank_scores(scores)
    if not np.all(np.isfinite(vals)):
        raise SchemaViolation("non-finite teacher score")
    sigma = float(np.std(vals[: params.top_n_for_sigma]))
    threshold = scores[positive] - sigma
    excluded = set(judged) | {positive}
    window = params.candidate_window_k
    eligible = tuple(
        d for d, v in zip(ranked[:window], vals[:window]) if v <= threshold and d not in excluded
    )
    if not eligible:
        raise EmptyEligible(f"no eligible negatives for query {query_id!r} (positive {positive!r})")
    n = min(params.negatives_per_query, len(eligible))
    picks = rng.choice(len(eligible), size=n, replace=False)
    sampled = tuple(eligible[i] for i in sorted(picks))
    return MinedNegatives(query_id, positive, sigma, eligible, sampled)


def read_run(path: str | Path) -> dict[str, dict[str, float]]:
    """TREC-run style TSV: query-id, doc-id, score (extra columns ignored)."""
    run: dict[str, dict[str, float]] = defaultdict(dict)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) < 3:
                raise SchemaViolation(f"{path}:{lineno}: expected query-id, doc-id, score")
            run[parts[0]][parts[1]] = float(parts[2])
    return dict(run)


def mine_run(
    run: Mapping[str, Mapping[str, float]],
    qrels: Mapping[str, Mapping[str, int]],
    params: MiningParams,
) -> Iterator[MinedNegatives]:
    """Mine every (query, positive) pair; queries are independent streams."""
    for qn, qid in enumerate(sorted(run)):
        judged = {d for d, g in qrels.get(qid, {}).items() if g > 0}
        rng = np.random.default_rng([params.seed, qn])
        for pos in sorted(judged):
            try:
                yield mine_hard_negatives(run[qid], pos, params, rng, judged=judged, query_id=qid)
            except (EmptyEligible, PositiveMissing) as exc:
                log.info("skipping %s/%s: %s", qid, pos, exc)
