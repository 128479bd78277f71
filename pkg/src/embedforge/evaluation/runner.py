"""Manifest-driven evaluation over embedding files.

A manifest lists datasets as ``[[dataset]]`` tables with ``id``, ``task``,
``path`` (relative to the manifest) and optional ``params``. Embeddings are
looked up in an embedding directory as ``<id>.emb`` / ``<id>.jsonl``, or as
``<id>.queries.*`` and ``<id>.corpus.*`` for retrieval and reranking.
"""

from __future__ import annotations

import csv
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from ..dataset_io import EmbeddingStore, embedding_store_io, load_labeled, load_retrieval_collection, read_jsonl
from ..errors import FileMissing, SchemaViolation
from . import tasks
from .report import TASKS, DatasetScore, EvalReport, aggregate

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass(frozen=True)
class TaskSpec:
    dataset: str
    task: str
    path: Path
    params: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.task not in TASKS:
            raise SchemaViolation(f"dataset {self.dataset!r}: unknown task {self.task!r}")


def load_manifest(path: str | Path) -> list[TaskSpec]:
    path = Path(path)
    if not path.is_file():
        raise FileMissing(f"no such manifest: {path}")
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    specs = []
    for entry in doc.get("dataset", []):
        specs.append(TaskSpec(entry["id"], entry["task"], path.parent / entry["path"], entry.get("params", {})))
    return specs


def _find_store(emb_dir: Path, stem: str) -> EmbeddingStore:
    for suffix in (".emb", ".jsonl"):
        p = emb_dir / f"{stem}{suffix}"
        if p.is_file():
            return embedding_store_io(p, "read")
    raise FileMissing(f"no embeddings for {stem!r} in {emb_dir}")


def _tsv(path: Path) -> list[list[str]]:
    if not path.is_file():
        raise FileMissing(f"no such file: {path}")
    with open(path, encoding="utf-8", newline="") as fh:
        return [row for row in csv.reader(fh, delimiter="\t") if row]


def run_task(spec: TaskSpec, emb_dir: str | Path, seed: int = 0) -> DatasetScore:
    emb_dir = Path(emb_dir)
    d, p = spec.path, dict(spec.params)
    if spec.task == "retrieval":
        res = tasks.eval_retrieval(
            _find_store(emb_dir, f"{spec.dataset}.queries"),
            _find_store(emb_dir, f"{spec.dataset}.corpus"),
            load_retrieval_collection(d),
        )
    elif spec.task == "reranking":
        cands = {str(r["query_id"]): (list(r["positive"]), list(r["negative"])) for r in read_jsonl(d / "candidates.jsonl")}
        res = tasks.eval_reranking(
            _find_store(emb_dir, f"{spec.dataset}.queries"), _find_store(emb_dir, f"{spec.dataset}.corpus"), cands
        )
    elif spec.task in ("classification", "multilabel"):
        fn = tasks.eval_classification if spec.task == "classification" else tasks.eval_multilabel
        res = fn(load_labeled(d / "train.jsonl"), load_labeled(d / "test.jsonl"), _find_store(emb_dir, spec.dataset), seed=seed, **p)
    elif spec.task == "pair_classification":
        pairs = [(a, b, int(lab)) for a, b, lab in _tsv(d / "pairs.tsv")]
        res = tasks.eval_pair_classification(_find_store(emb_dir, spec.dataset), pairs)
    elif spec.task == "sts":
        pairs = [(a, b, float(g)) for a, b, g in _tsv(d / "pairs.tsv")]
        res = tasks.eval_sts(_find_store(emb_dir, spec.dataset), pairs)
    else:
        rows = _tsv(d / "labels.tsv")
        res = tasks.eval_clustering(
            _find_store(emb_dir, spec.dataset), [r[0] for r in rows], [r[1] for r in rows], seed=seed, **p
        )
    return DatasetScore(spec.dataset, spec.task, float(res["main_score"]), res)


def evaluate_manifest(manifest: str | Path, emb_dir: str | Path, seed: int = 0) -> EvalReport:
    return aggregate(run_task(spec, emb_dir, seed) for spec in load_manifest(manifest))
