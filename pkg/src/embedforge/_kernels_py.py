"""Pure-Python reference kernels.

Same signatures and semantics as the compiled ``_kernels`` module; used
when the extension is unavailable or ``EMBEDFORGE_PURE_PYTHON=1``.
"""

from __future__ import annotations

import math

import numpy as np

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * FNV_PRIME) & _MASK64
    return h


def hash_buckets(tokens, hash_dim: int) -> np.ndarray:
    """Bucket index of every token (bytes) under FNV-1a 64 mod ``hash_dim``."""
    return np.array([fnv1a64(t) % hash_dim for t in tokens], dtype=np.int64)


def infonce_loss_grad(sims: np.ndarray, labels: np.ndarray, tau: float):
    """Mean InfoNCE over rows of ``sims`` and its gradient w.r.t. ``sims``."""
    sims = np.asarray(sims, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = sims.shape[0]
    logits = sims / tau
    logits = logits - logits.max(axis=1, keepdims=True)
    expl = np.exp(logits)
    denom = expl.sum(axis=1, keepdims=True)
    rows = np.arange(n)
    loss = float(np.mean(np.log(denom[:, 0]) - logits[rows, labels]))
    grad = expl / denom
    grad[rows, labels] -= 1.0
    grad /= tau * n
    return loss, grad


def ranked_average_precision(rel) -> float:
    """Mean of precision@rank over the ranks holding a positive."""
    hits = 0
    total = 0.0
    for rank, r in enumerate(rel, 1):
        if r:
            hits += 1
            total += hits / rank
    return total / hits if hits else 0.0


def tied_average_precision(scores_desc, labels_desc) -> float:
    """Step-wise AP where equal scores form a single threshold block.

    Inputs must already be sorted by descending score.
    """
    n = len(scores_desc)
    n_pos = int(sum(1 for x in labels_desc if x))
    if n_pos == 0:
        return 0.0
    ap = 0.0
    tp = 0
    prev_recall = 0.0
    i = 0
    while i < n:
        j = i
        while j < n and scores_desc[j] == scores_desc[i]:
            if labels_desc[j]:
                tp += 1
            j += 1
        recall = tp / n_pos
        ap += (recall - prev_recall) * (tp / j)
        prev_recall = recall
        i = j
    return ap


def dcg_at_k(gains, k: int) -> float:
    total = 0.0
    for i in range(min(k, len(gains))):
        g = gains[i]
        if g:
            total += g / math.log2(i + 2)
    return total
