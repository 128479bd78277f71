"""Exception hierarchy shared by every pipeline stage.

All domain failures derive from :class:`EmbedForgeError` so the CLI can map
them to exit code 1 and print a structured message.
"""

from __future__ import annotations


class EmbedForgeError(Exception):
    """Base class for domain errors."""

    code = "error"

    def to_dict(self) -> dict:
        return {"error": self.code, "message": str(self)}


class FileMissing(EmbedForgeError):
    code = "file_missing"


class SchemaViolation(EmbedForgeError):
    code = "schema_violation"


class DanglingReference(EmbedForgeError):
    code = "dangling_reference"

    def __init__(self, ref: str, kind: str = "id"):
        super().__init__(f"{kind} {ref!r} referenced in qrels is not defined")
        self.ref = ref
        self.kind = kind


class DimensionMismatch(EmbedForgeError):
    code = "dimension_mismatch"


class CorruptHeader(EmbedForgeError):
    code = "corrupt_header"


class EmptyInput(EmbedForgeError):
    code = "empty_input"


class MissingParameter(EmbedForgeError):
    code = "missing_parameter"


class TransportError(EmbedForgeError):
    code = "transport_error"


class SchemaError(EmbedForgeError):
    code = "schema_error"


class BudgetExceeded(EmbedForgeError):
    code = "budget_exceeded"


class ScoreOutOfRange(EmbedForgeError):
    code = "score_out_of_range"


class PositiveMissing(EmbedForgeError):
    code = "positive_missing"


class EmptyEligible(EmbedForgeError):
    code = "empty_eligible"


class NonFiniteSimilarity(EmbedForgeError):
    code = "non_finite_similarity"


class EmptyText(EmbedForgeError):
    code = "empty_text"


class DivergenceDetected(EmbedForgeError):
    code = "divergence_detected"

    def __init__(self, message: str, last_good=None, losses=None):
        super().__init__(message)
        self.last_good = last_good
        self.losses = losses or []


class TargetTooSmall(EmbedForgeError):
    code = "target_too_small"


class UnknownSpecial(EmbedForgeError):
    code = "unknown_special"


class InvalidCounts(EmbedForgeError):
    code = "invalid_counts"


class MissingEmbedding(EmbedForgeError):
    code = "missing_embedding"


class DegenerateLabels(EmbedForgeError):
    code = "degenerate_labels"


class LabelMissingInTrain(EmbedForgeError):
    code = "label_missing_in_train"


class DegenerateGold(EmbedForgeError):
    code = "degenerate_gold"


class EmptyReport(EmbedForgeError):
    code = "empty_report"
