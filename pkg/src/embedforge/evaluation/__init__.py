from .report import TASKS, DatasetScore, EvalReport, aggregate, aggregate_from_task_means
from .tasks import (
    eval_classification,
    eval_clustering,
    eval_multilabel,
    eval_pair_classification,
    eval_reranking,
    eval_retrieval,
    eval_sts,
)

__all__ = [
    "TASKS",
    "DatasetScore",
    "EvalReport",
    "aggregate",
    "aggregate_from_task_means",
    "eval_classification",
    "eval_clustering",
    "eval_multilabel",
    "eval_pair_classification",
    "eval_reranking",
    "eval_retrieval",
    "eval_sts",
]
