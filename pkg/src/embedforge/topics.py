"""Two-label conditional topic distribution.

Fits P(T1) and P(T2 | T1) from the two highest-scoring labels of classified
queries and samples (T1, T2) pairs to seed generation prompts. A query with
a single label adds to the "no second topic" mass of its first label.
"""

from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dataset_io import read_jsonl
from .errors import EmptyInput, SchemaViolation

_TOL = 1e-9


@dataclass(frozen=True)
class LabeledQuery:
    query: str
    labels: tuple[tuple[str, float], ...]

    def __post_init__(self):
        for topic, score in self.labels:
            if not (0.0 <= score <= 1.0):
                raise SchemaViolation(f"label score {score!r} for {topic!r} outside [0, 1]")
        for (t1, s1), (t2, s2) in zip(self.labels, self.labels[1:]):
            if not (s1 > s2 or (s1 == s2 and t1 < t2)):
                raise SchemaViolation("labels are not in descending score order")

    @classmethod
    def ingest(cls, query: str, labels: Iterable[Sequence]) -> "LabeledQuery":
        """Order labels by descending score, breaking ties by topic name."""
        pairs = [(str(t), float(s)) for t, s in labels]
        pairs.sort(key=lambda p: (-p[1], p[0]))
        return cls(query, tuple(pairs))


@dataclass(frozen=True)
class TopicDistribution:
    taxonomy: tuple[str, ...]
    p_t1: Mapping[str, float]
    p_t2_given_t1: Mapping[str, Mapping[str, float]]
    singleton_mass: Mapping[str, float]

    def __post_init__(self):
        if abs(sum(self.p_t1.values()) - 1.0) > _TOL:
            raise SchemaViolation("P(T1) does not sum to 1")
        for t1 in self.p_t1:
            total = sum(self.p_t2_given_t1.get(t1, {}).values()) + self.singleton_mass.get(t1, 0.0)
            if abs(total - 1.0) > _TOL:
                raise SchemaViolation(f"P(T2 | {t1}) plus singleton mass does not sum to 1")
        probs = list(self.p_t1.values()) + list(self.singleton_mass.values())
        probs += [p for row in self.p_t2_given_t1.values() for p in row.values()]
        if any(p < 0 for p in probs):
            raise SchemaViolation("negative probability")
        # sampling tables, sorted for determinism
        t1s = sorted(self.p_t1)
        object.__setattr__(self, "_t1_keys", t1s)
        object.__setattr__(self, "_t1_cdf", np.cumsum([self.p_t1[t] for t in t1s]))
        second = {}
        for t1 in t1s:
            row = self.p_t2_given_t1.get(t1, {})
            keys = sorted(row)
            second[t1] = (keys, np.cumsum([row[k] for k in keys]) if keys else np.zeros(0))
        object.__setattr__(self, "_t2_tables", second)

    def to_json(self) -> dict:
        return {
            "taxonomy": list(self.taxonomy),
            "p_t1": dict(self.p_t1),
            "p_t2_given_t1": {k: dict(v) for k, v in self.p_t2_given_t1.items()},
            "singleton_mass": dict(self.singleton_mass),
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "TopicDistribution":
        return cls(
            taxonomy=tuple(doc["taxonomy"]),
            p_t1=dict(doc["p_t1"]),
            p_t2_given_t1={k: dict(v) for k, v in doc["p_t2_given_t1"].items()},
            singleton_mass=dict(doc["singleton_mass"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "TopicDistribution":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def fit_topic_distribution(samples: Sequence[LabeledQuery]) -> TopicDistribution:
    """Unweighted counts of the top-two labels; no smoothing."""
    samples = [s for s in samples]
    if not samples:
        raise EmptyInput("no labeled queries to fit")
    first = Counter()
    second: dict[str, Counter] = defaultdict(Counter)
    single = Counter()
    topics = set()
    for s in samples:
        if not s.labels:
            raise SchemaViolation(f"query {s.query!r} has no labels")
        t1 = s.labels[0][0]
        first[t1] += 1
        topics.add(t1)
        if len(s.labels) >= 2:
            t2 = s.labels[1][0]
            second[t1][t2] += 1
            topics.add(t2)
        else:
            single[t1] += 1
    n = len(samples)
    p_t1 = {t: c / n for t, c in sorted(first.items())}
    p_t2 = {t1: {t2: c / first[t1] for t2, c in sorted(second[t1].items())} for t1 in sorted(second)}
    singleton = {t1: single[t1] / first[t1] for t1 in sorted(single)}
    return TopicDistribution(tuple(sorted(topics)), p_t1, p_t2, singleton)


def _draw(keys: list[str], cdf: np.ndarray, u: float) -> str:
    idx = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    return keys[min(idx, len(keys) - 1)]


def sample_topic_pair(dist: TopicDistribution, rng: np.random.Generator) -> tuple[str, str | None]:
    """Draw T1 from P(T1), then T2 from P(T2 | T1) or ``None`` with the singleton mass."""
    t1 = _draw(dist._t1_keys, dist._t1_cdf, rng.random())
    u = rng.random()
    if u < dist.singleton_mass.get(t1, 0.0):
        return t1, None
    keys, cdf = dist._t2_tables[t1]
    if not keys:
        return t1, None
    return t1, _draw(keys, cdf, rng.random())


def worker_rng(master_seed: int, worker: int) -> np.random.Generator:
    """Independent stream for a parallel worker, derived from the master seed."""
    return np.random.default_rng(np.random.SeedSequence(master_seed).spawn(worker + 1)[worker])


def load_labeled_queries(path: str | Path) -> list[LabeledQuery]:
    return [LabeledQuery.ingest(r["query"], r["labels"]) for r in read_jsonl(path)]
