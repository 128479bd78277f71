"""Source-homogeneous batching and the InfoNCE objective.

Every batch draws from one source. Queries are scored against the positives
and hard negatives of the whole batch, except for sources listed in
``TrainingConfig.no_in_batch_sources`` (the synthetic classification subset),
where each query only sees its own positive and negative.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Hashable, Mapping, Sequence

import numpy as np

from . import kernels
from .errors import NonFiniteSimilarity

log = logging.getLogger(__name__)

# Sizes of the training mix, in items.
DEFAULT_MIX = {
    "mmarco-nl": 310_000,
    "fever-nl": 140_000,
    "hotpotqa-nl": 170_000,
    "short-long": 80_000,
    "long-short": 140_000,
    "short-short": 15_000,
    "long-long": 15_000,
    "sts": 80_000,
}

CLASSIFICATION_SOURCE = "long-short"


@dataclass(frozen=True)
class TrainingConfig:
    batch_size: int = 1024
    temperature: float = 0.05
    learning_rate: float = 1e-5
    warmup_ratio: float = 0.25
    epochs: int = 1
    scheduler: str = "constant"
    seed: int = 0
    no_in_batch_sources: tuple[str, ...] = (CLASSIFICATION_SOURCE,)

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0.0 <= self.warmup_ratio <= 1.0:
            raise ValueError("warmup_ratio must lie in [0, 1]")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.scheduler != "constant":
            raise ValueError(f"unsupported scheduler {self.scheduler!r}")

    def lr_at(self, step: int, total_steps: int) -> float:
        """Linear warm-up over the first ``warmup_ratio`` of steps, then constant."""
        warm = int(round(self.warmup_ratio * total_steps))
        if warm <= 0 or step >= warm:
            return self.learning_rate
        return self.learning_rate * (step + 1) / warm


@dataclass(frozen=True)
class Batch:
    source: str
    items: tuple[Hashable, ...]
    in_batch_negatives_enabled: bool

    def to_record(self) -> dict:
        return {"source": self.source, "in_batch": self.in_batch_negatives_enabled, "items": list(self.items)}


def build_epoch(
    mix: Mapping[str, int | Sequence[Hashable]], cfg: TrainingConfig, rng: np.random.Generator
) -> list[Batch]:
    """Shuffle each source, cut full batches, drop the remainder, shuffle batch order.

    ``mix`` maps a source to either an item count (items become ``0..n-1``)
    or an explicit sequence of item ids.
    """
    batches: list[Batch] = []
    for source in sorted(mix):
        spec = mix[source]
        items = list(range(spec)) if isinstance(spec, int) else list(spec)
        perm = rng.permutation(len(items))
        n_full = len(items) // cfg.batch_size
        dropped = len(items) - n_full * cfg.batch_size
        if dropped:
            log.debug("%s: dropping %d trailing items", source, dropped)
        in_batch = source not in cfg.no_in_batch_sources
        for b in range(n_full):
            idx = perm[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            batches.append(Batch(source, tuple(items[i] for i in idx), in_batch))
    if not batches:
        log.warning("epoch is empty: no source reaches batch size %d", cfg.batch_size)
    order = rng.permutation(len(batches))
    return [batches[i] for i in order]


def epoch_batch_count(mix: Mapping[str, int], batch_size: int) -> int:
    return sum(n // batch_size for n in mix.values())


def candidate_similarities(
    q: np.ndarray, p: np.ndarray, n: np.ndarray | None, in_batch: bool
) -> tuple[np.ndarray, np.ndarray]:
    """Similarity rows and positive indices for a batch of query/pos/neg embeddings.

    In-batch: every query is scored against ``[P; N]`` and its label is its
    own row. Otherwise each row is ``[p_i, n_i]`` with label 0.
    """
    b = q.shape[0]
    if in_batch:
        cands = p if n is None else np.vstack([p, n])
        return q @ cands.T, np.arange(b)
    if n is None:
        raise ValueError("rows without in-batch negatives need a hard negative")
    sims = np.stack([np.einsum("ij,ij->i", q, p), np.einsum("ij,ij->i", q, n)], axis=1)
    return sims, np.zeros(b, dtype=np.int64)


def infonce_loss(sims, labels, tau: float) -> tuple[float, np.ndarray]:
    """Mean InfoNCE over rows and its analytic gradient w.r.t. ``sims``."""
    sims = np.asarray(sims, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if sims.ndim != 2 or sims.shape[1] < 2:
        raise ValueError("need a 2-D similarity matrix with at least 2 candidates per row")
    if labels.shape != (sims.shape[0],) or labels.min(initial=0) < 0 or labels.max(initial=0) >= sims.shape[1]:
        raise ValueError("labels must index a candidate in each row")
    if not np.all(np.isfinite(sims)):
        raise NonFiniteSimilarity("similarity matrix contains NaN or Inf")
    return kernels.infonce_loss_grad(sims, labels, float(tau))
