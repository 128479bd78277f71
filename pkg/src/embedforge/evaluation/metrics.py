"""Ranking, correlation and clustering metrics on plain arrays.

All functions return fractions in [0, 1] (or [-1, 1] for correlation); the
task evaluators scale to 0-100.
"""

from __future__ import annotations

import math
from collections import Counter
from typing import Hashable, Mapping, Sequence

import numpy as np

from .. import kernels


def ndcg_at_k(ranked: Sequence[str], judged: Mapping[str, int], k: int) -> float:
    """Linear-gain nDCG; ``nan`` when the query has no positive grade."""
    ideal = sorted((g for g in judged.values() if g > 0), reverse=True)
    idcg = kernels.dcg_at_k(np.asarray(ideal, dtype=np.float64), k)
    if idcg <= 0:
        return math.nan
    gains = np.array([judged.get(d, 0) for d in ranked[:k]], dtype=np.float64)
    return kernels.dcg_at_k(gains, k) / idcg


def recall_at_k(ranked: Sequence[str], judged: Mapping[str, int], k: int) -> float:
    relevant = {d for d, g in judged.items() if g > 0}
    if not relevant:
        return math.nan
    return sum(1 for d in ranked[:k] if d in relevant) / len(relevant)


def ranked_average_precision(labels_in_rank_order: Sequence[int]) -> float:
    """Mean of precision@rank taken at each positive's rank."""
    return kernels.ranked_average_precision(np.asarray(labels_in_rank_order, dtype=np.int8))


def average_precision(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Threshold-sweep AP; tied scores enter as a single block."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int8)
    order = np.argsort(-s, kind="stable")
    return kernels.tied_average_precision(s[order], y[order])


def average_ranks(x: Sequence[float]) -> np.ndarray:
    """1-based ranks; ties receive the mean of the ranks they span."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    xs = x[order]
    ranks = np.empty(len(x))
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and xs[j + 1] == xs[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    rx, ry = average_ranks(x), average_ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = math.sqrt(float(rx @ rx) * float(ry @ ry))
    return float(rx @ ry) / denom if denom > 0 else 0.0


def _entropy(counts) -> float:
    n = sum(counts)
    return -sum(c / n * math.log(c / n) for c in counts if c)


def v_measure(labels_true: Sequence[Hashable], labels_pred: Sequence[Hashable], beta: float = 1.0) -> float:
    """Weighted harmonic mean of homogeneity and completeness."""
    n = len(labels_true)
    if n == 0:
        return 1.0
    joint = Counter(zip(labels_true, labels_pred))
    classes = Counter(labels_true)
    clusters = Counter(labels_pred)
    h_c, h_k = _entropy(classes.values()), _entropy(clusters.values())
    h_c_given_k = -sum(c / n * math.log(c / clusters[k]) for (_, k), c in joint.items())
    h_k_given_c = -sum(c / n * math.log(c / classes[t]) for (t, _), c in joint.items())
    homogeneity = 1.0 if h_c == 0 else 1.0 - h_c_given_k / h_c
    completeness = 1.0 if h_k == 0 else 1.0 - h_k_given_c / h_k
    if homogeneity + completeness == 0:
        return 0.0
    return (1 + beta) * homogeneity * completeness / (beta * homogeneity + completeness)


def cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a, axis=1, keepdims=True)
    nb = np.linalg.norm(b, axis=1, keepdims=True)
    return (a / np.where(na == 0, 1, na)) @ (b / np.where(nb == 0, 1, nb)).T


def rowwise_cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
    return np.einsum("ij,ij->i", a, b) / np.where(denom == 0, 1, denom)
