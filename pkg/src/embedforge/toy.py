"""Desk-scale check of the training contract.

A hashing bag-of-words encoder (token counts -> linear map -> L2 norm) is
trained with the same batching and InfoNCE code used for real runs. It only
has to learn a synthetic, vocabulary-separable retrieval task.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .batching import TrainingConfig, build_epoch, candidate_similarities, infonce_loss
from .dataset_io import EmbeddingStore, RetrievalCollection, Triplet
from .errors import DivergenceDetected, EmptyText, NonFiniteSimilarity, SchemaViolation
from .vocab import EmbeddingMatrix

log = logging.getLogger(__name__)

_EPS = 1e-12


def tokenize(text: str) -> list[str]:
    return text.lower().split()


@dataclass
class ToyEncoder:
    weights: np.ndarray
    seed: int = 0

    @classmethod
    def init(cls, hash_dim: int = 4096, embed_dim: int = 64, seed: int = 0) -> "ToyEncoder":
        rng = np.random.default_rng(seed)
        w = rng.normal(0.0, 1.0 / np.sqrt(embed_dim), size=(hash_dim, embed_dim))
        return cls(w, seed)

    @property
    def hash_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.weights.shape[1]

    def copy(self) -> "ToyEncoder":
        return ToyEncoder(self.weights.copy(), self.seed)

    def featurize(self, texts: Sequence[str]) -> np.ndarray:
        x = np.zeros((len(texts), self.hash_dim))
        for i, text in enumerate(texts):
            toks = tokenize(text)
            if not toks:
                raise EmptyText(f"text {i} has no tokens")
            buckets = kernels.hash_buckets([t.encode("utf-8") for t in toks], self.hash_dim)
            x[i] = np.bincount(buckets, minlength=self.hash_dim)
        return x

    def _forward(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        z = x @ self.weights
        norms = np.maximum(np.linalg.norm(z, axis=1, keepdims=True), _EPS)
        return z / norms, norms

    def encode_many(self, texts: Sequence[str]) -> np.ndarray:
        return self._forward(self.featurize(texts))[0]

    def to_store(self, ids: Sequence[str], texts: Sequence[str]) -> EmbeddingStore:
        return EmbeddingStore(self.embed_dim, list(ids), self.encode_many(texts))


def encode(enc: ToyEncoder, text: str) -> np.ndarray:
    return enc.encode_many([text])[0]


def _norm_backward(grad_e: np.ndarray, e: np.ndarray, norms: np.ndarray) -> np.ndarray:
    return (grad_e - e * np.einsum("ij,ij->i", grad_e, e)[:, None]) / norms


def batch_loss_and_grad(
    enc: ToyEncoder, xq: np.ndarray, xp: np.ndarray, xn: np.ndarray, in_batch: bool, tau: float
) -> tuple[float, np.ndarray]:
    """InfoNCE on one batch and its gradient w.r.t. the encoder weights."""
    eq, nq = enc._forward(xq)
    ep, np_ = enc._forward(xp)
    en, nn = enc._forward(xn)
    sims, labels = candidate_similarities(eq, ep, en, in_batch)
    loss, g = infonce_loss(sims, labels, tau)
    if in_batch:
        b = eq.shape[0]
        cands = np.vstack([ep, en])
        d_q = g @ cands
        d_c = g.T @ eq
        d_p, d_n = d_c[:b], d_c[b:]
    else:
        d_q = g[:, :1] * ep + g[:, 1:] * en
        d_p = g[:, :1] * eq
        d_n = g[:, 1:] * eq
    grad_w = (
        xq.T @ _norm_backward(d_q, eq, nq)
        + xp.T @ _norm_backward(d_p, ep, np_)
        + xn.T @ _norm_backward(d_n, en, nn)
    )
    return loss, grad_w


def source_tag(t: Triplet) -> str:
    return t.category if t.source == "synthetic" else t.source


def train_toy(
    data: Sequence[Triplet],
    cfg: TrainingConfig,
    hash_dim: int = 4096,
    embed_dim: int = 64,
    encoder: ToyEncoder | None = None,
) -> tuple[ToyEncoder, list[float]]:
    """Plain gradient descent; returns the encoder and per-batch losses."""
    data = list(data)
    if len(data) < 4 * cfg.batch_size:
        raise ValueError(f"need at least {4 * cfg.batch_size} triplets, got {len(data)}")
    if any(t.negative is None for t in data):
        raise ValueError("toy training needs a negative for every triplet")
    enc = encoder.copy() if encoder is not None else ToyEncoder.init(hash_dim, embed_dim, cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    xq = enc.featurize([t.query for t in data])
    xp = enc.featurize([t.positive for t in data])
    xn = enc.featurize([t.negative for t in data])
    mix: dict[str, list[int]] = {}
    for i, t in enumerate(data):
        mix.setdefault(source_tag(t), []).append(i)
    epochs = [build_epoch(mix, cfg, rng) for _ in range(cfg.epochs)]
    total = sum(len(e) for e in epochs)
    losses: list[float] = []
    last_good = enc.copy()
    step = 0
    for batches in epochs:
        for batch in batches:
            idx = np.asarray(batch.items)
            try:
                with np.errstate(all="ignore"):
                    loss, grad = batch_loss_and_grad(
                        enc, xq[idx], xp[idx], xn[idx], batch.in_batch_negatives_enabled, cfg.temperature
                    )
            except NonFiniteSimilarity:
                loss, grad = float("nan"), None
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise DivergenceDetected(f"non-finite loss at step {step}", last_good=last_good, losses=losses)
            losses.append(loss)
            last_good = enc.copy()
            with np.errstate(all="ignore"):
                enc.weights -= cfg.lr_at(step, total) * grad
            step += 1
    return enc, losses


def bucket_token(i: int) -> str:
    return f"<bucket:{i}>"


def encoder_to_matrix(enc: ToyEncoder) -> EmbeddingMatrix:
    """Weights as a trimmable matrix; row ``i`` is hash bucket ``i``."""
    return EmbeddingMatrix(tuple(bucket_token(i) for i in range(enc.hash_dim)), enc.weights)


def encoder_from_matrix(mat: EmbeddingMatrix, seed: int = 0) -> ToyEncoder:
    if mat.tokens != tuple(bucket_token(i) for i in range(mat.vocab_size)):
        raise SchemaViolation("matrix rows are not hash buckets in order")
    return ToyEncoder(mat.rows.astype(np.float64), seed)


def write_loss_curve(path: str | Path, losses: Sequence[float]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["batch_index", "loss"])
        for i, v in enumerate(losses):
            w.writerow([i, repr(float(v))])


# ---------------------------------------------------------------------------
# Synthetic separable task
# ---------------------------------------------------------------------------


def make_separable_task(
    n_train: int = 512,
    n_topics: int = 8,
    vocab_per_topic: int = 16,
    n_eval_queries_per_topic: int = 8,
    n_eval_docs_per_topic: int = 20,
    seed: int = 0,
) -> tuple[list[Triplet], RetrievalCollection]:
    """Triplets and a held-out collection where queries and documents never
    share tokens: query word ``q<t>_<j>`` corresponds to document word
    ``d<t>_<j>``. A held-out document is relevant when it shares the query's topic.
    """
    rng = np.random.default_rng(seed)

    def qwords(t, js):
        return " ".join(f"q{t}_{j}" for j in js)

    def dwords(t, js):
        return " ".join(f"d{t}_{j}" for j in js)

    def pick(k):
        return rng.choice(vocab_per_topic, size=k, replace=False)

    train = []
    for i in range(n_train):
        t = int(rng.integers(n_topics))
        other = int((t + 1 + rng.integers(n_topics - 1)) % n_topics)
        js = pick(3)
        extra = [j for j in pick(6) if j not in js][:3]
        train.append(
            Triplet(
                id=f"toy-{i:05d}",
                category="short-long",
                query=qwords(t, js),
                positive=dwords(t, list(js) + extra),
                negative=dwords(other, pick(6)),
                meta={"topic": str(t)},
            )
        )
    corpus, queries, qrels = {}, {}, {}
    by_topic: dict[int, list[str]] = {}
    for t in range(n_topics):
        for k in range(n_eval_docs_per_topic):
            did = f"d{t}-{k:03d}"
            corpus[did] = dwords(t, pick(6))
            by_topic.setdefault(t, []).append(did)
    for t in range(n_topics):
        for k in range(n_eval_queries_per_topic):
            qid = f"q{t}-{k:03d}"
            queries[qid] = qwords(t, pick(3))
            qrels[qid] = {d: 1 for d in by_topic[t]}
    return train, RetrievalCollection(corpus, queries, qrels)
