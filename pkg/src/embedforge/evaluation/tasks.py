"""The seven task evaluators. Each returns a dict whose ``main_score`` is on
a 0-100 scale, plus secondary metrics."""

from __future__ import annotations

import math
import warnings
from typing import Mapping, Sequence

import numpy as np
from sklearn.cluster import KMeans
from sklearn.exceptions import ConvergenceWarning
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import f1_score

from ..dataset_io import EmbeddingStore, LabeledExample, RetrievalCollection
from ..errors import DegenerateGold, DegenerateLabels, DimensionMismatch, LabelMissingInTrain, SchemaViolation
from .metrics import (
    average_precision,
    cosine_matrix,
    ndcg_at_k,
    ranked_average_precision,
    recall_at_k,
    rowwise_cosine,
    spearman,
    v_measure,
)

SUBSAMPLE_SIZES = (8, 16, 32, 64, 128)
_MAX_RESAMPLE = 10


def _check_dims(*stores: EmbeddingStore) -> None:
    dims = {s.dim for s in stores}
    if len(dims) != 1:
        raise DimensionMismatch(f"embedding stores disagree on dimension: {sorted(dims)}")


def _mean(xs) -> float:
    xs = [x for x in xs if not math.isnan(x)]
    return float(np.mean(xs)) if xs else math.nan


# ---------------------------------------------------------------------------
# Retrieval and reranking
# ---------------------------------------------------------------------------


def eval_retrieval(
    query_emb: EmbeddingStore,
    doc_emb: EmbeddingStore,
    coll: RetrievalCollection,
    chunk: int = 256,
) -> dict:
    """nDCG@{1,10,100} and recall@{10,100} over cosine rankings of the corpus."""
    _check_dims(query_emb, doc_emb)
    doc_ids = sorted(coll.corpus)
    d = doc_emb.rows(doc_ids)
    qids = sorted(q for q in coll.qrels if any(g > 0 for g in coll.qrels[q].values()))
    per_query: dict[str, dict[str, float]] = {}
    for start in range(0, len(qids), chunk):
        batch = qids[start : start + chunk]
        sims = cosine_matrix(query_emb.rows(batch), d)
        # docs are in ascending id order, so a stable sort breaks ties by id
        order = np.argsort(-sims, axis=1, kind="stable")[:, :100]
        for qid, row in zip(batch, order):
            ranked = [doc_ids[i] for i in row]
            judged = coll.qrels[qid]
            per_query[qid] = {
                "ndcg_at_1": ndcg_at_k(ranked, judged, 1),
                "ndcg_at_10": ndcg_at_k(ranked, judged, 10),
                "ndcg_at_100": ndcg_at_k(ranked, judged, 100),
                "recall_at_10": recall_at_k(ranked, judged, 10),
                "recall_at_100": recall_at_k(ranked, judged, 100),
            }
    keys = ("ndcg_at_1", "ndcg_at_10", "ndcg_at_100", "recall_at_10", "recall_at_100")
    out = {k: 100.0 * _mean(v[k] for v in per_query.values()) for k in keys}
    out["n_queries"] = len(per_query)
    out["main_score"] = out["ndcg_at_10"]
    return out


def eval_reranking(
    query_emb: EmbeddingStore,
    cand_emb: EmbeddingStore,
    candidates: Mapping[str, tuple[Sequence[str], Sequence[str]]],
) -> dict:
    """MAP over per-query candidate lists ranked by cosine."""
    _check_dims(query_emb, cand_emb)
    aps, rrs = [], []
    for qid in sorted(candidates):
        pos, neg = candidates[qid]
        if not pos or not neg:
            raise SchemaViolation(f"query {qid!r} needs at least one positive and one negative")
        ids = sorted(set(pos) | set(neg))
        rel = np.array([d in set(pos) for d in ids], dtype=np.int8)
        sims = cosine_matrix(query_emb.rows([qid]), cand_emb.rows(ids))[0]
        order = np.argsort(-sims, kind="stable")
        ranked = rel[order]
        aps.append(ranked_average_precision(ranked))
        rrs.append(1.0 / (int(np.argmax(ranked)) + 1))
    return {"map": 100.0 * _mean(aps), "mrr": 100.0 * _mean(rrs), "main_score": 100.0 * _mean(aps)}


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------


def _per_label_sample(labels_of: Sequence[Sequence[str]], n: int, rng: np.random.Generator) -> np.ndarray:
    """Indices holding up to ``n`` examples for every label (union across labels)."""
    by_label: dict[str, list[int]] = {}
    for i, labs in enumerate(labels_of):
        for lab in labs:
            by_label.setdefault(lab, []).append(i)
    chosen: set[int] = set()
    for lab in sorted(by_label):
        idx = by_label[lab]
        take = rng.choice(len(idx), size=min(n, len(idx)), replace=False)
        chosen.update(idx[j] for j in take)
    return np.array(sorted(chosen), dtype=np.int64)


def eval_classification(
    train: Sequence[LabeledExample],
    test: Sequence[LabeledExample],
    emb: EmbeddingStore,
    n_experiments: int = 10,
    sizes: Sequence[int] = SUBSAMPLE_SIZES,
    max_iter: int = 100,
    reg_strength: float = 1.0,
    seed: int = 0,
) -> dict:
    """Logistic regression on stratified train subsamples; mean F1-macro."""
    y_train = [ex.labels[0] for ex in train]
    y_test = [ex.labels[0] for ex in test]
    if len(set(y_train)) < 2:
        raise DegenerateLabels("training data has fewer than two classes")
    x_train = emb.rows([ex.id for ex in train]).astype(np.float64)
    x_test = emb.rows([ex.id for ex in test]).astype(np.float64)
    ss = np.random.SeedSequence(seed)
    scores, accs = [], []
    for i, child in enumerate(ss.spawn(n_experiments)):
        rng = np.random.default_rng(child)
        n = sizes[i % len(sizes)]
        for _ in range(_MAX_RESAMPLE):
            idx = _per_label_sample([[y] for y in y_train], n, rng)
            if len({y_train[j] for j in idx}) >= 2:
                break
        else:
            raise DegenerateLabels(f"experiment {i}: subsample keeps a single class")
        clf = LogisticRegression(C=reg_strength, max_iter=max_iter)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            clf.fit(x_train[idx], [y_train[j] for j in idx])
        pred = clf.predict(x_test)
        scores.append(f1_score(y_test, pred, average="macro"))
        accs.append(float(np.mean(pred == np.asarray(y_test, dtype=object))))
    return {
        "f1_macro": 100.0 * float(np.mean(scores)),
        "accuracy": 100.0 * float(np.mean(accs)),
        "per_experiment": [100.0 * s for s in scores],
        "main_score": 100.0 * float(np.mean(scores)),
    }


def knn_multilabel_predict(
    x_train: np.ndarray, y_train: np.ndarray, x_test: np.ndarray, k: int
) -> np.ndarray:
    """Cosine k-NN; a label is predicted when a strict majority of the k
    neighbours carry it. Similarity ties go to the lower train index."""
    sims = cosine_matrix(x_test, x_train)
    k = min(k, x_train.shape[0])
    nn = np.argsort(-sims, axis=1, kind="stable")[:, :k]
    votes = y_train[nn].sum(axis=1)
    return (2 * votes > k).astype(np.int8)


def eval_multilabel(
    train: Sequence[LabeledExample],
    test: Sequence[LabeledExample],
    emb: EmbeddingStore,
    n_experiments: int = 10,
    sizes: Sequence[int] = SUBSAMPLE_SIZES,
    k: int = 5,
    seed: int = 0,
) -> dict:
    label_set = sorted({lab for ex in train for lab in ex.labels})
    missing = sorted({lab for ex in test for lab in ex.labels} - set(label_set))
    if missing:
        raise LabelMissingInTrain(f"labels absent from train: {missing}")
    col = {lab: j for j, lab in enumerate(label_set)}

    def indicator(examples):
        y = np.zeros((len(examples), len(label_set)), dtype=np.int8)
        for i, ex in enumerate(examples):
            for lab in ex.labels:
                y[i, col[lab]] = 1
        return y

    y_train, y_test = indicator(train), indicator(test)
    x_train = emb.rows([ex.id for ex in train]).astype(np.float64)
    x_test = emb.rows([ex.id for ex in test]).astype(np.float64)
    scores = []
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(n_experiments)):
        rng = np.random.default_rng(child)
        idx = _per_label_sample([ex.labels for ex in train], sizes[i % len(sizes)], rng)
        pred = knn_multilabel_predict(x_train[idx], y_train[idx], x_test, k)
        scores.append(f1_score(y_test, pred, average="macro", zero_division=0))
    return {
        "f1_macro": 100.0 * float(np.mean(scores)),
        "per_experiment": [100.0 * s for s in scores],
        "main_score": 100.0 * float(np.mean(scores)),
    }


# ---------------------------------------------------------------------------
# Pair classification, clustering, STS
# ---------------------------------------------------------------------------


def pair_channels(a: np.ndarray, b: np.ndarray) -> dict[str, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return {
        "cosine": rowwise_cosine(a, b),
        "dot": np.einsum("ij,ij->i", a, b),
        "euclidean": -np.linalg.norm(a - b, axis=1),
        "manhattan": -np.abs(a - b).sum(axis=1),
    }


def eval_pair_classification(emb: EmbeddingStore, pairs: Sequence[tuple[str, str, int]]) -> dict:
    labels = np.array([int(lab) for _, _, lab in pairs], dtype=np.int8)
    if set(np.unique(labels)) != {0, 1}:
        raise DegenerateLabels("pair classification needs both labels 0 and 1")
    a = emb.rows([p[0] for p in pairs])
    b = emb.rows([p[1] for p in pairs])
    aps = {name: 100.0 * average_precision(s, labels) for name, s in pair_channels(a, b).items()}
    out = {f"{name}_ap": v for name, v in aps.items()}
    out["main_score"] = max(aps.values())
    return out


def eval_clustering(
    emb: EmbeddingStore,
    ids: Sequence[str],
    gold: Sequence[str],
    n_repeats: int = 5,
    n_init: int = 10,
    max_iter: int = 300,
    seed: int = 0,
) -> dict:
    """k-means (k = number of gold labels) on all documents; mean V-measure."""
    k = len(set(gold))
    if k < 2:
        raise DegenerateLabels("clustering needs at least two gold labels")
    x = emb.rows(list(ids)).astype(np.float64)
    scores = []
    for child in np.random.SeedSequence(seed).spawn(n_repeats):
        km = KMeans(
            n_clusters=k,
            init="k-means++",
            n_init=n_init,
            max_iter=max_iter,
            random_state=int(child.generate_state(1)[0]),
        )
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            pred = km.fit_predict(x)
        scores.append(v_measure(list(gold), pred.tolist()))
    return {
        "v_measure": 100.0 * float(np.mean(scores)),
        "per_repeat": [100.0 * s for s in scores],
        "main_score": 100.0 * float(np.mean(scores)),
    }


def eval_sts(emb: EmbeddingStore, pairs: Sequence[tuple[str, str, float]]) -> dict:
    gold = np.array([float(g) for _, _, g in pairs])
    if len(pairs) < 3 or np.all(gold == gold[0]):
        raise DegenerateGold("need at least 3 pairs with non-constant gold scores")
    sims = rowwise_cosine(emb.rows([p[0] for p in pairs]), emb.rows([p[1] for p in pairs]))
    rho = spearman(sims, gold)
    return {"cosine_spearman": 100.0 * rho, "main_score": 100.0 * rho}
