"""Parameter sampling, template rendering and hardness tiers for the five
synthetic data categories."""

from __future__ import annotations

import json
import re
from dataclasses import asdict, dataclass
from functools import lru_cache
from importlib import resources
from typing import Any

import numpy as np

from ..dataset_io import CATEGORIES
from ..errors import MissingParameter, SchemaViolation

_PLACEHOLDER = re.compile(r"\{([a-z0-9-]+)\}")


@lru_cache(maxsize=None)
def load_config() -> dict:
    return json.loads(resources.files(__package__).joinpath("params.json").read_text(encoding="utf-8"))


@lru_cache(maxsize=None)
def load_template(category: str) -> str:
    if category not in CATEGORIES:
        raise SchemaViolation(f"unknown category {category!r}")
    return resources.files(__package__).joinpath("templates", f"{category}.txt").read_text(encoding="utf-8")


_OPTIONAL = ("query_type", "query_length", "clarity", "num_words", "difficulty", "unit", "high_score", "low_score")


@dataclass(frozen=True)
class PromptParams:
    category: str
    task: str | None
    topics: tuple[str, str | None]
    lexical_overlap_flag: bool = False
    local_flag: bool = False
    query_type: str | None = None
    query_length: str | None = None
    clarity: str | None = None
    num_words: int | None = None
    difficulty: str | None = None
    unit: str | None = None
    high_score: float | None = None
    low_score: float | None = None

    def __post_init__(self):
        cfg = load_config()
        if self.category not in cfg["categories"]:
            raise SchemaViolation(f"unknown category {self.category!r}")
        used = set(cfg["categories"][self.category]["fields"])
        for name in _OPTIONAL:
            present = getattr(self, name) is not None
            if present != (name in used):
                raise SchemaViolation(f"{name} {'unexpected' if present else 'missing'} for {self.category}")
        if ("task" in used) != (self.task is not None):
            raise SchemaViolation(f"task presence wrong for {self.category}")
        if self.lexical_overlap_flag and "lexical_overlap_flag" not in used:
            raise SchemaViolation(f"lexical overlap flag is not used by {self.category}")
        if self.high_score is not None and not self.high_score > self.low_score:
            raise SchemaViolation("high score must exceed low score")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["topics"] = list(self.topics)
        return {k: v for k, v in d.items() if v is not None or k == "topics"}

    @classmethod
    def from_dict(cls, d: dict) -> "PromptParams":
        d = dict(d)
        d["topics"] = tuple(d["topics"]) if len(d["topics"]) == 2 else (d["topics"][0], None)
        d.setdefault("task", None)
        return cls(**d)


def sample_params(category: str, topic_pair: tuple[str, str | None], rng: np.random.Generator) -> PromptParams:
    """Draw every templated parameter uniformly from its domain.

    The local flag is Bernoulli(0.3); the lexical-overlap flag is
    Bernoulli(0.5) and only exists for ``short-long``.
    """
    cfg = load_config()
    try:
        cat = cfg["categories"][category]
    except KeyError:
        raise SchemaViolation(f"unknown category {category!r}") from None
    dom = cfg["domains"]
    fields = cat["fields"]

    def pick(values):
        return values[int(rng.integers(len(values)))]

    # fixed draw order keeps prompt sequences stable across versions
    kw: dict[str, Any] = {}
    kw["task"] = pick(cat["tasks"]) if "task" in fields else None
    if "query_type" in fields:
        kw["query_type"] = pick(dom["query_type"])
    if "query_length" in fields:
        kw["query_length"] = pick(cat["query_length"])
    if "clarity" in fields:
        kw["clarity"] = pick(dom["clarity"])
    if "num_words" in fields:
        kw["num_words"] = int(pick(dom["num_words"]))
    if "unit" in fields:
        kw["unit"] = pick(dom["unit"])
    if "high_score" in fields:
        kw["high_score"] = float(pick(dom["high_score"]))
        kw["low_score"] = float(pick(dom["low_score"]))
    if "difficulty" in fields:
        kw["difficulty"] = pick(dom["difficulty"])
    overlap = bool(rng.random() < cfg["lexical_overlap_probability"])
    kw["lexical_overlap_flag"] = overlap if "lexical_overlap_flag" in fields else False
    kw["local_flag"] = bool(rng.random() < cfg["local_flag_probability"])
    t1, t2 = topic_pair
    return PromptParams(category=category, topics=(t1, t2), **kw)


def _fmt_score(x: float) -> str:
    return f"{x:g}"


def _substitutions(p: PromptParams) -> dict[str, str]:
    cfg = load_config()
    t1, t2 = p.topics
    subs = {"topics": t1 if t2 is None else f"{t1} and {t2}"}
    if p.task is not None:
        subs["task"] = p.task
    for name in ("query_type", "query_length", "clarity", "difficulty", "unit"):
        v = getattr(p, name)
        if v is not None:
            subs[name.replace("_", "-")] = v
    if p.num_words is not None:
        subs["num-words"] = str(p.num_words)
    if p.high_score is not None:
        subs["high-score"] = _fmt_score(p.high_score)
        subs["low-score"] = _fmt_score(p.low_score)
    if p.category == "short-long":
        subs["lexical-overlap"] = cfg["lexical_overlap_text"] if p.lexical_overlap_flag else ""
    local_text = cfg["local_flag_text_sts"] if p.category == "sts" else cfg["local_flag_text"]
    subs["local-flag"] = local_text if p.local_flag else ""
    return subs


def render_prompt(params: PromptParams) -> str:
    """Fill the category template; disabled clauses leave no trace."""
    subs = _substitutions(params)

    def fill(m: re.Match) -> str:
        try:
            return subs[m.group(1)]
        except KeyError:
            raise MissingParameter(f"no value for {{{m.group(1)}}} in {params.category} template") from None

    text = _PLACEHOLDER.sub(fill, load_template(params.category))
    lines = [ln.rstrip() for ln in text.splitlines()]
    return "\n".join(ln for ln in lines if ln != "-") + "\n"


# ---------------------------------------------------------------------------
# Hardness tiers
# ---------------------------------------------------------------------------

DIFFICULTY_POINTS = {"Layman": 0, "High school": 1, "Bachelor's degree": 2, "Master's degree or higher": 3}
CLARITY_POINTS = {"Clear": 0, "Understandable with some effort": 1, "Ambiguous": 2}
QUERY_TYPE_POINTS = {"Common": 0, "Long-tail": 1, "Extremely long-tail": 2}
TIERS = ("nano", "mini", "full")


@dataclass(frozen=True)
class HardnessTier:
    tier: str
    score: int


def hardness_score(p: PromptParams) -> int:
    score = 0
    if p.difficulty is not None:
        score += DIFFICULTY_POINTS[p.difficulty]
    if p.clarity is not None:
        score += CLARITY_POINTS[p.clarity]
    score += 2 * int(p.lexical_overlap_flag)
    if p.num_words is not None:
        score += 2 if p.num_words >= 500 else 1 if p.num_words >= 300 else 0
    if p.query_length == "At least 12 words":
        score += 1
    if p.query_type is not None:
        score += QUERY_TYPE_POINTS[p.query_type]
    return score


def tier_for_score(score: int) -> str:
    if score <= 2:
        return "nano"
    if score <= 5:
        return "mini"
    return "full"


def hardness_tier(params: PromptParams) -> HardnessTier:
    score = hardness_score(params)
    return HardnessTier(tier_for_score(score), score)
