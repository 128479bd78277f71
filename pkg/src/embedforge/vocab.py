"""Vocabulary trimming of an embedding matrix.

Keeps the special tokens plus the most frequent corpus tokens, copies their
rows unchanged, and reports the old -> new id map. Only the embedding
matrix changes; the rest of the model is untouched.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import CorruptHeader, InvalidCounts, SchemaViolation, TargetTooSmall, UnknownSpecial

MATRIX_MAGIC = b"VMAT"


@dataclass(frozen=True)
class EmbeddingMatrix:
    tokens: tuple[str, ...]
    rows: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float32)
        if rows.ndim != 2 or rows.shape[0] != len(self.tokens):
            raise SchemaViolation(f"{len(self.tokens)} tokens but rows of shape {rows.shape}")
        if len(set(self.tokens)) != len(self.tokens):
            raise SchemaViolation("token table has duplicates")
        if not np.all(np.isfinite(rows)):
            raise SchemaViolation("embedding matrix has non-finite values")
        object.__setattr__(self, "rows", rows)

    @property
    def vocab_size(self) -> int:
        return len(self.tokens)

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


def trim_vocabulary(
    mat: EmbeddingMatrix, stats: Mapping[str, int], target: int, specials: Sequence[str]
) -> tuple[EmbeddingMatrix, dict[int, int]]:
    """Keep ``specials`` plus the ``target - len(specials)`` most frequent tokens.

    Count ties go to the lower original index. Output order: specials as
    given, then the remaining kept tokens in original index order.
    """
    index = {t: i for i, t in enumerate(mat.tokens)}
    specials = list(dict.fromkeys(specials))
    unknown = [s for s in specials if s not in index]
    if unknown:
        raise UnknownSpecial(f"special tokens not in vocabulary: {unknown}")
    if target < len(specials):
        raise TargetTooSmall(f"target {target} is below the {len(specials)} special tokens")
    special_ids = [index[s] for s in specials]
    special_set = set(special_ids)
    pool = [i for i in range(mat.vocab_size) if i not in special_set]
    pool.sort(key=lambda i: (-stats.get(mat.tokens[i], 0), i))
    chosen = sorted(pool[: target - len(specials)])
    order = special_ids + chosen
    id_map = {old: new for new, old in enumerate(order)}
    trimmed = EmbeddingMatrix(tuple(mat.tokens[i] for i in order), mat.rows[order].copy())
    return trimmed, id_map


def reduction_ratio(old_v: int, new_v: int, dim: int, total_params: int) -> float:
    """Fraction of all parameters removed by dropping ``old_v - new_v`` rows."""
    removed = (old_v - new_v) * dim
    if min(old_v, new_v, dim, total_params) <= 0 or new_v > old_v or total_params <= removed:
        raise InvalidCounts(f"inconsistent counts old={old_v} new={new_v} dim={dim} total={total_params}")
    return removed / total_params


def write_matrix(path: str | Path, mat: EmbeddingMatrix) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MATRIX_MAGIC + struct.pack("<II", mat.vocab_size, mat.dim))
        fh.write(struct.pack("<I", mat.vocab_size))
        for tok in mat.tokens:
            raw = tok.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)) + raw)
        fh.write(mat.rows.astype("<f4").tobytes())


def read_matrix(path: str | Path) -> EmbeddingMatrix:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != MATRIX_MAGIC:
        raise CorruptHeader(f"{path}: not a VMAT file")
    v, d = struct.unpack_from("<II", data, 4)
    (count,) = struct.unpack_from("<I", data, 12)
    if count != v:
        raise CorruptHeader(f"{path}: token table has {count} entries for V={v}")
    off, tokens = 16, []
    for _ in range(count):
        if off + 4 > len(data):
            raise CorruptHeader(f"{path}: truncated token table")
        (ln,) = struct.unpack_from("<I", data, off)
        tokens.append(data[off + 4 : off + 4 + ln].decode("utf-8"))
        off += 4 + ln
    if len(data) - off != 4 * v * d:
        raise CorruptHeader(f"{path}: expected {4 * v * d} bytes of weights, found {len(data) - off}")
    rows = np.frombuffer(data, dtype="<f4", offset=off).reshape(v, d).astype(np.float32)
    return EmbeddingMatrix(tuple(tokens), rows)


def read_token_stats(path: str | Path) -> dict[str, int]:
    stats = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            tok, _, count = line.rpartition("\t")
            try:
                n = int(count)
            except ValueError:
                raise SchemaViolation(f"{path}:{lineno}: count {count!r} is not an integer") from None
            if n < 0:
                raise SchemaViolation(f"{path}:{lineno}: negative count")
            stats[tok] = n
    return stats


def write_id_map(path: str | Path, id_map: Mapping[int, int]) -> None:
    Path(path).write_text(json.dumps({str(k): v for k, v in sorted(id_map.items())}, indent=1) + "\n")
