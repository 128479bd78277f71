"""Chat-completion driven triplet generation.

A campaign renders prompts from sampled topics and parameters, routes each
prompt to a model by hardness tier, validates the JSON reply, and appends
every outcome to a journal so an interrupted run resumes where it stopped.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
from collections import Counter
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol

import httpx
import numpy as np

from .dataset_io import CATEGORIES, CATEGORY_KEYS, Triplet, TripletSet, triplet_from_record, write_triplets
from .errors import BudgetExceeded, EmbedForgeError, SchemaError, SchemaViolation, TransportError
from .prompts import HardnessTier, PromptParams, hardness_tier, render_prompt, sample_params
from .topics import TopicDistribution, sample_topic_pair

log = logging.getLogger(__name__)

API_KEY_ENV = "EMBEDFORGE_API_KEY"

_FENCE = re.compile(r"^\s*```[A-Za-z0-9_-]*\s*\n?(.*?)\n?\s*```\s*$", re.DOTALL)


@dataclass(frozen=True)
class TierRoute:
    model: str
    url: str
    max_in_flight: int = 4
    timeout: float = 60.0
    max_retries: int = 3

    def __post_init__(self):
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


@dataclass(frozen=True)
class ModelRoute:
    tiers: Mapping[str, TierRoute]
    temperature: float = 1.0

    def __post_init__(self):
        missing = {"nano", "mini", "full"} - set(self.tiers)
        if missing:
            raise ValueError(f"route is missing tiers: {sorted(missing)}")

    def __getitem__(self, tier: str) -> TierRoute:
        return self.tiers[tier]

    @classmethod
    def from_config(cls, cfg: Mapping) -> "ModelRoute":
        defaults = {k: v for k, v in cfg.items() if k not in ("tiers", "temperature")}
        tiers = {name: TierRoute(**{**defaults, **spec}) for name, spec in cfg["tiers"].items()}
        return cls(tiers, float(cfg.get("temperature", 1.0)))


@dataclass
class ChatResponse:
    text: str
    prompt_tokens: int | None = None
    completion_tokens: int | None = None


class ChatTransport(Protocol):
    def complete(self, route: TierRoute, prompt: str, temperature: float) -> ChatResponse: ...


class HttpChatTransport:
    """POSTs ``{model, messages, temperature}`` to a chat-completions URL."""

    def __init__(self, client: httpx.Client | None = None, api_key: str | None = None):
        self.client = client or httpx.Client()
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        if not self.api_key:
            raise TransportError(f"{API_KEY_ENV} is not set")

    def complete(self, route: TierRoute, prompt: str, temperature: float) -> ChatResponse:
        body = {
            "model": route.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": temperature,
        }
        try:
            resp = self.client.post(
                route.url,
                json=body,
                headers={"Authorization": f"Bearer {self.api_key}"},
                timeout=route.timeout,
            )
        except httpx.HTTPError as exc:
            raise TransportError(f"{type(exc).__name__}: {exc}") from exc
        if resp.status_code >= 400:
            raise TransportError(f"HTTP {resp.status_code} from {route.url}")
        try:
            doc = resp.json()
            text = doc["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError):
            raise TransportError("malformed chat-completions response") from None
        usage = doc.get("usage") or {}
        return ChatResponse(text, usage.get("prompt_tokens"), usage.get("completion_tokens"))


class Budget:
    """Soft spending limit from per-1K-token prices (input, output) per model."""

    def __init__(self, limit: float = float("inf"), prices: Mapping[str, tuple[float, float]] | None = None):
        self.limit = limit
        self.prices = dict(prices or {})
        self.spent = 0.0
        self._lock = threading.Lock()

    def check(self) -> None:
        with self._lock:
            if self.spent >= self.limit:
                raise BudgetExceeded(f"spent {self.spent:.4f} of {self.limit:.4f}")

    def charge(self, model: str, prompt: str, resp: ChatResponse) -> float:
        p_in, p_out = self.prices.get(model, (0.0, 0.0))
        n_in = resp.prompt_tokens if resp.prompt_tokens is not None else max(1, len(prompt) // 4)
        n_out = resp.completion_tokens if resp.completion_tokens is not None else max(1, len(resp.text) // 4)
        cost = (n_in * p_in + n_out * p_out) / 1000.0
        with self._lock:
            self.spent += cost
        return cost


def strip_fences(text: str) -> str:
    m = _FENCE.match(text)
    return m.group(1) if m else text.strip()


def parse_reply(text: str, category: str) -> dict:
    """Parse a model reply into a JSON object with exactly the category keys."""
    try:
        obj = json.loads(strip_fences(text))
    except json.JSONDecodeError:
        raise SchemaError("reply is not JSON") from None
    if not isinstance(obj, dict):
        raise SchemaError("reply is not a JSON object")
    expected = set(CATEGORY_KEYS[category])
    if set(obj) != expected:
        raise SchemaError(f"reply keys {sorted(obj)} != {sorted(expected)}")
    return obj


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


def generate_triplet(
    prompt: str,
    route: ModelRoute,
    tier: HardnessTier,
    category: str,
    transport: ChatTransport,
    params: PromptParams | None = None,
    budget: Budget | None = None,
    triplet_id: str | None = None,
) -> Triplet:
    """Request one triplet, retrying the same prompt on transport or schema failure.

    The returned triplet's meta records the model, tier, attempt count and
    number of retries. On final failure the raised error carries
    ``attempts``.
    """
    tr = route[tier.tier]
    last: EmbedForgeError | None = None
    for attempt in range(1, tr.max_retries + 2):
        if budget is not None:
            budget.check()
        try:
            resp = transport.complete(tr, prompt, route.temperature)
        except TransportError as exc:
            last = exc
            log.debug("attempt %d transport failure: %s", attempt, exc)
            continue
        if budget is not None:
            budget.charge(tr.model, prompt, resp)
        try:
            obj = parse_reply(resp.text, category)
            rec = dict(obj)
            if category == "sts":
                if params is None or params.high_score is None:
                    raise SchemaError("sts generation needs prompt params for target scores")
                rec["high-score"] = params.high_score
                rec["low-score"] = params.low_score
            rec["meta"] = {
                "model": tr.model,
                "tier": tier.tier,
                "hardness": str(tier.score),
                "attempts": str(attempt),
                "retries": str(attempt - 1),
                "prompt_hash": prompt_hash(prompt),
            }
            if params is not None:
                rec["meta"]["topics"] = " | ".join(t for t in params.topics if t)
                rec["meta"]["params"] = json.dumps(params.to_dict(), sort_keys=True, ensure_ascii=False)
            if triplet_id is not None:
                rec["id"] = triplet_id
            return triplet_from_record(rec, category)
        except (SchemaError, SchemaViolation) as exc:
            last = exc if isinstance(exc, SchemaError) else SchemaError(str(exc))
            log.debug("attempt %d schema failure: %s", attempt, exc)
    last.attempts = tr.max_retries + 1
    raise last


# ---------------------------------------------------------------------------
# Campaigns
# ---------------------------------------------------------------------------


@dataclass
class CampaignPlan:
    targets: Mapping[str, int]
    seed: int
    route: ModelRoute
    journal_path: Path
    output_path: Path | None = None
    budget: Budget = field(default_factory=Budget)

    def __post_init__(self):
        for cat, n in self.targets.items():
            if cat not in CATEGORIES:
                raise ValueError(f"unknown category {cat!r}")
            if n < 0:
                raise ValueError(f"negative target for {cat}")
        self.journal_path = Path(self.journal_path)
        if self.output_path is not None:
            self.output_path = Path(self.output_path)


@dataclass
class CampaignStats:
    requests: Counter = field(default_factory=Counter)
    failures: Counter = field(default_factory=Counter)
    produced: Counter = field(default_factory=Counter)
    resumed: int = 0
    cost: float = 0.0

    def to_dict(self) -> dict:
        return {
            "requests": dict(self.requests),
            "failures": dict(self.failures),
            "produced": dict(self.produced),
            "resumed": self.resumed,
            "cost": self.cost,
        }


@dataclass(frozen=True)
class PlannedPrompt:
    category: str
    index: int
    params: PromptParams
    prompt: str
    tier: HardnessTier

    @property
    def triplet_id(self) -> str:
        return f"{self.category}-{self.index:07d}"


def plan_prompt(dist: TopicDistribution, category: str, index: int, seed: int) -> PlannedPrompt:
    """The prompt issued at ``index`` of ``category``; a pure function of the seed."""
    rng = np.random.default_rng([seed, CATEGORIES.index(category), index])
    params = sample_params(category, sample_topic_pair(dist, rng), rng)
    return PlannedPrompt(category, index, params, render_prompt(params), hardness_tier(params))


def read_journal(path: Path) -> list[dict]:
    if not path.exists():
        return []
    entries = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            try:
                entries.append(json.loads(line))
            except json.JSONDecodeError:
                # torn final write from a killed run
                log.warning("skipping unreadable journal line in %s", path)
    return entries


class _Journal:
    def __init__(self, path: Path):
        path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(path, "a", encoding="utf-8")

    def append(self, entry: dict) -> None:
        self._fh.write(json.dumps(entry, ensure_ascii=False, sort_keys=True) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


_CONSUMED = ("ok", "schema_error")


def run_campaign(
    plan: CampaignPlan, dist: TopicDistribution, transport: ChatTransport
) -> tuple[TripletSet, CampaignStats]:
    stats = CampaignStats()
    done: dict[str, dict[int, Triplet]] = {c: {} for c in CATEGORIES}
    consumed: dict[str, set[int]] = {c: set() for c in CATEGORIES}
    seen: dict[str, set[int]] = {c: set() for c in CATEGORIES}
    for e in read_journal(plan.journal_path):
        cat, idx = e.get("category"), e.get("index")
        if cat not in done or not isinstance(idx, int):
            continue
        seen[cat].add(idx)
        if e.get("status") in _CONSUMED:
            consumed[cat].add(idx)
        if e.get("status") == "ok" and e.get("triplet"):
            done[cat][idx] = triplet_from_record(e["triplet"], cat)
            stats.resumed += 1

    semaphores = {t: threading.Semaphore(r.max_in_flight) for t, r in plan.route.tiers.items()}
    journal = _Journal(plan.journal_path)
    n_workers = sum(r.max_in_flight for r in plan.route.tiers.values())
    pool = ThreadPoolExecutor(max_workers=n_workers)
    wave_cap = max(256, 8 * n_workers)

    def work(pp: PlannedPrompt):
        with semaphores[pp.tier.tier]:
            try:
                return generate_triplet(
                    pp.prompt, plan.route, pp.tier, pp.category, transport,
                    params=pp.params, budget=plan.budget, triplet_id=pp.triplet_id,
                )
            except EmbedForgeError as exc:
                return exc

    try:
        for cat in CATEGORIES:
            target = plan.targets.get(cat, 0)
            retry = sorted(seen[cat] - consumed[cat])
            next_index = max(seen[cat], default=-1) + 1
            while len(done[cat]) < target:
                need = min(target - len(done[cat]), wave_cap)
                indices = retry[:need]
                retry = retry[need:]
                while len(indices) < need:
                    indices.append(next_index)
                    next_index += 1
                wave = [plan_prompt(dist, cat, i, plan.seed) for i in indices]
                futures = {pool.submit(work, pp): pp for pp in wave}
                fatal: EmbedForgeError | None = None
                # journal each outcome as soon as it lands so a kill loses at most in-flight work
                for fut in as_completed(futures):
                    pp, res = futures[fut], fut.result()
                    tier = pp.tier.tier
                    entry = {"prompt_hash": prompt_hash(pp.prompt), "category": cat, "index": pp.index, "tier": tier}
                    if isinstance(res, Triplet):
                        attempts = int(res.meta["attempts"])
                        stats.requests[tier] += attempts
                        stats.failures[tier] += attempts - 1
                        done[cat][pp.index] = res
                        entry.update(status="ok", attempt=attempts, triplet=res.to_record())
                    else:
                        attempts = getattr(res, "attempts", 0)
                        stats.requests[tier] += attempts
                        stats.failures[tier] += attempts
                        status = {
                            SchemaError: "schema_error",
                            TransportError: "transport_error",
                            BudgetExceeded: "budget_exceeded",
                        }.get(type(res), "error")
                        entry.update(status=status, attempt=attempts, error=str(res))
                        if status != "schema_error":
                            fatal = fatal or res
                            retry.append(pp.index)
                    journal.append(entry)
                if fatal is not None:
                    raise fatal
    finally:
        pool.shutdown(wait=True)
        journal.close()
        stats.cost = plan.budget.spent

    triplets = []
    for cat in CATEGORIES:
        kept = sorted(done[cat])[: plan.targets.get(cat, 0)]
        triplets.extend(done[cat][idx] for idx in kept)
        stats.produced[cat] = len(kept)
    out = TripletSet(triplets)
    if plan.output_path is not None:
        write_triplets(plan.output_path, out)
    return out, stats
