"""Per-dataset scores rolled up into per-task means, AvgD and AvgT."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from ..errors import EmptyReport, SchemaViolation

TASKS = ("classification", "multilabel", "pair_classification", "reranking", "retrieval", "clustering", "sts")
TASK_COLUMNS = {
    "classification": "Cls",
    "multilabel": "MLCls",
    "pair_classification": "PCls",
    "reranking": "Rrnk",
    "retrieval": "Rtr",
    "clustering": "Clust",
    "sts": "STS",
}


@dataclass(frozen=True)
class DatasetScore:
    dataset: str
    task: str
    main_score: float
    details: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.task not in TASKS:
            raise SchemaViolation(f"unknown task {self.task!r} for dataset {self.dataset!r}")


@dataclass
class EvalReport:
    datasets: list[DatasetScore]
    per_task: dict[str, float]
    avg_d: float
    avg_t: float

    def to_json(self) -> dict:
        return {
            "datasets": [
                {"dataset": d.dataset, "task": d.task, "main_score": d.main_score, "details": dict(d.details)}
                for d in self.datasets
            ],
            "per_task": self.per_task,
            "avg_d": self.avg_d,
            "avg_t": self.avg_t,
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "EvalReport":
        return aggregate(
            DatasetScore(d["dataset"], d["task"], float(d["main_score"]), d.get("details", {}))
            for d in doc["datasets"]
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    def to_markdown(self, model: str = "model") -> str:
        cols = [TASK_COLUMNS[t] for t in TASKS] + ["AvgD", "AvgT"]
        counts = {t: sum(1 for d in self.datasets if d.task == t) for t in TASKS}
        lines = [
            "| | " + " | ".join(cols) + " |",
            "|" + "---|" * (len(cols) + 1),
            "| Num. Datasets | " + " | ".join(str(counts[t]) for t in TASKS) + f" | {len(self.datasets)} | |",
        ]
        cells = [f"{self.per_task[t]:.1f}" if t in self.per_task else "-" for t in TASKS]
        cells += [f"{self.avg_d:.1f}", f"{self.avg_t:.1f}"]
        lines.append(f"| {model} | " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"


def aggregate(scores: Iterable[DatasetScore]) -> EvalReport:
    """AvgD: mean over datasets. AvgT: mean over the per-task means of the
    tasks present. Nothing is rounded here."""
    scores = list(scores)
    if not scores:
        raise EmptyReport("no dataset scores to aggregate")
    by_task: dict[str, list[float]] = {}
    for s in scores:
        by_task.setdefault(s.task, []).append(s.main_score)
    per_task = {t: sum(v) / len(v) for t in TASKS if (v := by_task.get(t))}
    avg_d = sum(s.main_score for s in scores) / len(scores)
    avg_t = sum(per_task.values()) / len(per_task)
    return EvalReport(scores, per_task, avg_d, avg_t)


def aggregate_from_task_means(task_means: Mapping[str, float], counts: Mapping[str, int]) -> EvalReport:
    """Rebuild a report from a table row: each task mean stands in for its
    ``counts[task]`` datasets."""
    scores = []
    for task in TASKS:
        if task not in task_means:
            continue
        for i in range(counts[task]):
            scores.append(DatasetScore(f"{task}-{i}", task, float(task_means[task])))
    return aggregate(scores)
