"""Reranker-margin filtering of generated triplets.

A triplet survives when the reranker prefers its positive over its negative,
but not by so much that the negative is trivially easy:
``0 < s_pos - s_neg < C`` with both bounds strict.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

import httpx

from .dataset_io import Triplet, read_jsonl
from .errors import ScoreOutOfRange, TransportError

DEFAULT_C = 0.96

REJECT_NON_POSITIVE = "non-positive margin"
REJECT_TOO_WIDE = "margin ≥ C"


@dataclass(frozen=True)
class RerankScore:
    id: str
    s_pos: float
    s_neg: float

    def __post_init__(self):
        for s in (self.s_pos, self.s_neg):
            if not (isinstance(s, (int, float)) and math.isfinite(s) and 0.0 <= s <= 1.0):
                raise ScoreOutOfRange(f"score {s!r} for triplet {self.id!r} outside [0, 1]")

    @property
    def margin(self) -> float:
        return self.s_pos - self.s_neg


@dataclass(frozen=True)
class FilterConfig:
    threshold_c: float = DEFAULT_C

    def __post_init__(self):
        if not (0.0 < self.threshold_c <= 1.0):
            raise ValueError(f"threshold C must be in (0, 1], got {self.threshold_c}")


class Reranker(Protocol):
    def score(self, query: str, documents: Sequence[str]) -> list[float]: ...


class HttpReranker:
    """Reranker endpoint taking ``{query, documents}`` and answering ``{scores}``."""

    def __init__(self, url: str, client: httpx.Client | None = None, timeout: float = 60.0, api_key: str | None = None):
        self.url = url
        self.client = client or httpx.Client()
        self.timeout = timeout
        self.api_key = api_key if api_key is not None else os.environ.get("EMBEDFORGE_API_KEY")

    def score(self, query: str, documents: Sequence[str]) -> list[float]:
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        try:
            resp = self.client.post(
                self.url, json={"query": query, "documents": list(documents)}, headers=headers, timeout=self.timeout
            )
        except httpx.HTTPError as exc:
            raise TransportError(f"{type(exc).__name__}: {exc}") from exc
        if resp.status_code >= 400:
            raise TransportError(f"HTTP {resp.status_code} from {self.url}")
        try:
            scores = resp.json()["scores"]
        except (ValueError, KeyError, TypeError):
            raise TransportError("malformed reranker response") from None
        if len(scores) != len(documents):
            raise TransportError(f"reranker returned {len(scores)} scores for {len(documents)} documents")
        return [float(s) for s in scores]


def pair_key(query: str, doc: str) -> str:
    return hashlib.sha256(json.dumps([query, doc], ensure_ascii=False).encode("utf-8")).hexdigest()


class ScoreCache:
    """Content-addressed (query, doc) -> score cache, optionally file backed."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self._data: dict[str, float] = {}
        if self.path and self.path.exists():
            self._data = {k: float(v) for k, v in json.loads(self.path.read_text()).items()}

    def get(self, query: str, doc: str) -> float | None:
        return self._data.get(pair_key(query, doc))

    def put(self, query: str, doc: str, score: float) -> None:
        self._data[pair_key(query, doc)] = score

    def __len__(self) -> int:
        return len(self._data)

    def save(self) -> None:
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text(json.dumps(self._data, sort_keys=True))


def _checked(score: float, query: str) -> float:
    if not (isinstance(score, (int, float)) and math.isfinite(score) and 0.0 <= score <= 1.0):
        raise ScoreOutOfRange(f"reranker returned {score!r} for query {query[:40]!r}")
    return float(score)


def score_triplets(
    triplets: Iterable[Triplet], scorer: Reranker, cache: ScoreCache | None = None
) -> list[RerankScore]:
    """Score positive and negative of every triplet; sts triplets are skipped."""
    cache = cache if cache is not None else ScoreCache()
    out = []
    for t in triplets:
        if t.category == "sts" or t.negative is None:
            continue
        docs = [t.positive, t.negative]
        missing = [d for d in dict.fromkeys(docs) if cache.get(t.query, d) is None]
        if missing:
            for d, s in zip(missing, scorer.score(t.query, missing)):
                cache.put(t.query, d, _checked(s, t.query))
        out.append(RerankScore(t.id, cache.get(t.query, t.positive), cache.get(t.query, t.negative)))
    cache.save()
    return out


def filter_triplets(
    scores: Iterable[RerankScore], cfg: FilterConfig = FilterConfig()
) -> tuple[list[str], list[tuple[str, str]]]:
    kept, rejected = [], []
    for s in scores:
        m = s.margin
        if not m > 0.0:
            rejected.append((s.id, REJECT_NON_POSITIVE))
        elif not m < cfg.threshold_c:
            rejected.append((s.id, REJECT_TOO_WIDE))
        else:
            kept.append(s.id)
    return kept, rejected


def load_scores(path: str | Path) -> list[RerankScore]:
    return [RerankScore(str(r["id"]), float(r["s_pos"]), float(r["s_neg"])) for r in read_jsonl(path)]


def scores_to_rows(scores: Iterable[RerankScore]) -> list[Mapping]:
    return [{"id": s.id, "s_pos": s.s_pos, "s_neg": s.s_neg} for s in scores]
