"""Readers and writers for triplets, retrieval collections, labeled examples
and embedding stores.

Text is NFC-normalized on load so hashing and dedup are stable.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import struct
import unicodedata
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import (
    CorruptHeader,
    DanglingReference,
    DimensionMismatch,
    FileMissing,
    MissingEmbedding,
    SchemaViolation,
)

log = logging.getLogger(__name__)

CATEGORIES = ("short-long", "long-short", "short-short", "long-long", "sts")
SOURCES = ("synthetic", "mmarco", "fever", "hotpotqa", "other")

# JSON keys the generator emits for each category, mapped onto
# (query, positive, negative).
CATEGORY_KEYS: dict[str, tuple[str, str, str]] = {
    "short-long": ("user-query", "positive-document", "hard-negative-document"),
    "short-short": ("input", "positive-document", "hard-negative-document"),
    "long-long": ("input", "positive-document", "hard-negative-document"),
    "long-short": ("input-text", "label", "misleading-label"),
    "sts": ("S1", "S2", "S3"),
}
STS_SCORE_KEYS = ("high-score", "low-score")

PACKED_MAGIC = b"EMB1"
_PACKED_HEADER = struct.Struct("<4sIQ")


def nfc(text: str) -> str:
    return unicodedata.normalize("NFC", text)


def content_id(*parts: str) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(p.encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()[:16]


def _require_file(path: Path) -> Path:
    path = Path(path)
    if not path.is_file():
        raise FileMissing(f"no such file: {path}")
    return path


# ---------------------------------------------------------------------------
# Triplets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Triplet:
    """One contrastive example.

    For ``sts`` the three texts are S1/S2/S3 and ``high_score``/``low_score``
    hold the requested similarities of (S1, S2) and (S1, S3).
    """

    id: str
    category: str
    query: str
    positive: str
    negative: str | None = None
    source: str = "synthetic"
    meta: Mapping[str, str] = field(default_factory=dict)
    high_score: float | None = None
    low_score: float | None = None

    def __post_init__(self):
        problem = _triplet_problem(self)
        if problem:
            raise SchemaViolation(problem)

    def to_record(self) -> dict:
        """Serialize with the category's generator keys plus provenance."""
        qk, pk, nk = CATEGORY_KEYS[self.category]
        rec: dict = {"id": self.id, "category": self.category, qk: self.query, pk: self.positive}
        if self.negative is not None:
            rec[nk] = self.negative
        if self.category == "sts":
            rec["high-score"] = self.high_score
            rec["low-score"] = self.low_score
        rec["source"] = self.source
        if self.meta:
            rec["meta"] = dict(self.meta)
        return rec


def _triplet_problem(t: Triplet) -> str | None:
    if t.category not in CATEGORIES:
        return f"unknown category {t.category!r}"
    if t.source not in SOURCES:
        return f"unknown source {t.source!r}"
    if not isinstance(t.query, str) or not t.query.strip():
        return "empty query"
    if not isinstance(t.positive, str) or not t.positive.strip():
        return "empty positive"
    if t.category != "sts":
        if not isinstance(t.negative, str) or not t.negative.strip():
            return "empty negative"
        return None
    if t.negative is not None and (not isinstance(t.negative, str) or not t.negative.strip()):
        return "empty S3"
    for s in (t.high_score, t.low_score):
        if not isinstance(s, (int, float)) or isinstance(s, bool) or not (1.0 <= s <= 5.0):
            return "sts score outside [1, 5]"
    if t.high_score < t.low_score:
        return "sts high score below low score"
    return None


@dataclass
class TripletSet:
    triplets: list[Triplet]
    rejections: list[tuple[int, str]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.triplets)

    def __iter__(self) -> Iterator[Triplet]:
        return iter(self.triplets)

    @property
    def rejection_count(self) -> int:
        return len(self.rejections)


def triplet_from_record(rec: Mapping, category: str, source: str = "synthetic") -> Triplet:
    """Build a Triplet from a generator-shaped JSON object.

    Raises :class:`SchemaViolation` with a short reason on any problem.
    """
    if not isinstance(rec, Mapping):
        raise SchemaViolation("not a JSON object")
    if category not in CATEGORY_KEYS:
        raise SchemaViolation(f"unknown category {category!r}")
    qk, pk, nk = CATEGORY_KEYS[category]
    needed = [qk, pk, nk] + (list(STS_SCORE_KEYS) if category == "sts" else [])
    for key in needed:
        if key not in rec:
            raise SchemaViolation("missing key")
    texts = [rec[qk], rec[pk], rec[nk]]
    if not all(isinstance(x, str) for x in texts):
        raise SchemaViolation("non-string text")
    query, positive, negative = (nfc(x) for x in texts)
    meta = rec.get("meta") or {}
    if not isinstance(meta, Mapping):
        raise SchemaViolation("meta is not an object")
    meta = {str(k): str(v) for k, v in meta.items()}
    tid = rec.get("id")
    if tid is None:
        tid = content_id(category, query, positive, negative)
    kwargs = {}
    if category == "sts":
        try:
            kwargs = {"high_score": float(rec["high-score"]), "low_score": float(rec["low-score"])}
        except (TypeError, ValueError):
            raise SchemaViolation("non-numeric sts score") from None
    return Triplet(
        id=str(tid),
        category=category,
        query=query,
        positive=positive,
        negative=negative,
        source=str(rec.get("source", source)),
        meta=meta,
        **kwargs,
    )


def load_triplets(path: str | Path, category: str | None = None, source: str = "synthetic") -> TripletSet:
    """Load a triplet JSONL file; invalid lines are skipped and recorded.

    Without ``category`` each record must carry its own ``category`` field.
    """
    path = _require_file(path)
    out = TripletSet([])
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                out.rejections.append((lineno, "invalid json"))
                continue
            try:
                cat = category or (rec.get("category") if isinstance(rec, dict) else None)
                out.triplets.append(triplet_from_record(rec, cat, source))
            except SchemaViolation as exc:
                out.rejections.append((lineno, str(exc)))
    for lineno, reason in out.rejections:
        log.warning("%s:%d rejected: %s", path, lineno, reason)
    return out


def write_triplets(path: str | Path, triplets: Iterable[Triplet]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for t in triplets:
            fh.write(json.dumps(t.to_record(), ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# Retrieval collections
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RetrievalCollection:
    corpus: dict[str, str]
    queries: dict[str, str]
    qrels: dict[str, dict[str, int]]

    def __post_init__(self):
        for qid, judged in self.qrels.items():
            if qid not in self.queries:
                raise DanglingReference(qid, "query")
            for did, grade in judged.items():
                if did not in self.corpus:
                    raise DanglingReference(did, "document")
                if not isinstance(grade, int) or grade < 0:
                    raise SchemaViolation(f"relevance {grade!r} for ({qid}, {did}) is not a non-negative integer")

    @property
    def n_judged(self) -> int:
        return sum(len(v) for v in self.qrels.values())


def read_jsonl(path: str | Path) -> list[dict]:
    rows = []
    with open(_require_file(path), encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    rows.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise SchemaViolation(f"{path}:{lineno}: {exc}") from None
    return rows


def write_jsonl(path: str | Path, rows: Iterable[Mapping]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(json.dumps(r, ensure_ascii=False) + "\n")


def read_qrels(path: str | Path) -> dict[str, dict[str, int]]:
    qrels: dict[str, dict[str, int]] = {}
    with open(_require_file(path), encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                parts = line.split()
            if len(parts) != 3:
                raise SchemaViolation(f"{path}:{lineno}: expected 3 columns")
            qid, did, grade = parts
            try:
                g = int(grade)
            except ValueError:
                raise SchemaViolation(f"{path}:{lineno}: relevance {grade!r} is not an integer") from None
            if g < 0:
                raise SchemaViolation(f"{path}:{lineno}: negative relevance")
            qrels.setdefault(qid, {})[did] = g
    return qrels


def load_retrieval_collection(directory: str | Path) -> RetrievalCollection:
    d = Path(directory)
    corpus = {}
    for row in read_jsonl(d / "corpus.jsonl"):
        title = row.get("title") or ""
        text = row.get("text", "")
        corpus[str(row["_id"])] = nfc(f"{title} {text}".strip() if title else text)
    queries = {str(r["_id"]): nfc(r["text"]) for r in read_jsonl(d / "queries.jsonl")}
    return RetrievalCollection(corpus, queries, read_qrels(d / "qrels.tsv"))


# ---------------------------------------------------------------------------
# Labeled examples
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LabeledExample:
    id: str
    text: str
    labels: tuple[str, ...]

    def __post_init__(self):
        if not self.labels:
            raise SchemaViolation(f"example {self.id!r} has no labels")
        if len(set(self.labels)) != len(self.labels):
            raise SchemaViolation(f"example {self.id!r} has duplicate labels")


def load_labeled(path: str | Path) -> list[LabeledExample]:
    out = []
    for row in read_jsonl(path):
        labels = row.get("labels")
        if labels is None:
            labels = [row["label"]] if "label" in row else []
        out.append(LabeledExample(str(row["id"]), nfc(row.get("text", "")), tuple(str(x) for x in labels)))
    return out


# ---------------------------------------------------------------------------
# Embedding stores
# ---------------------------------------------------------------------------


class EmbeddingStore:
    """Immutable id -> float32 vector map with a fixed dimension."""

    def __init__(self, dim: int, ids: Sequence[str], vectors):
        if not isinstance(dim, int) or dim <= 0:
            raise DimensionMismatch(f"dimension must be a positive integer, got {dim!r}")
        mat = np.asarray(vectors, dtype=np.float32)
        if len(ids) == 0:
            mat = mat.reshape(0, dim)
        if mat.ndim != 2 or mat.shape != (len(ids), dim):
            raise DimensionMismatch(f"expected {len(ids)}x{dim} vectors, got shape {mat.shape}")
        if not np.all(np.isfinite(mat)):
            raise SchemaViolation("embedding store contains non-finite components")
        self.dim = dim
        self.ids = [str(i) for i in ids]
        self._index = {i: n for n, i in enumerate(self.ids)}
        if len(self._index) != len(self.ids):
            raise SchemaViolation("duplicate ids in embedding store")
        mat = mat.copy()
        mat.setflags(write=False)
        self.matrix = mat

    @classmethod
    def from_dict(cls, entries: Mapping[str, Sequence[float]], dim: int | None = None) -> "EmbeddingStore":
        ids = list(entries)
        if dim is None:
            if not ids:
                raise DimensionMismatch("cannot infer dimension of an empty store")
            dim = len(entries[ids[0]])
        for i in ids:
            if len(entries[i]) != dim:
                raise DimensionMismatch(f"vector {i!r} has {len(entries[i])} components, expected {dim}")
        return cls(dim, ids, [entries[i] for i in ids] if ids else np.zeros((0, dim)))

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, key: str) -> bool:
        return key in self._index

    def __getitem__(self, key: str) -> np.ndarray:
        return self.matrix[self._index[key]]

    def rows(self, keys: Sequence[str]) -> np.ndarray:
        try:
            idx = [self._index[k] for k in keys]
        except KeyError as exc:
            raise MissingEmbedding(f"no embedding for id {exc.args[0]!r}") from None
        return self.matrix[idx]

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingStore):
            return NotImplemented
        return (
            self.dim == other.dim
            and self.ids == other.ids
            and self.matrix.tobytes() == other.matrix.tobytes()
        )

    def __repr__(self) -> str:
        return f"EmbeddingStore(dim={self.dim}, n={len(self)})"


def packed_size(store: EmbeddingStore) -> int:
    return _PACKED_HEADER.size + sum(4 + len(i.encode("utf-8")) + 4 * store.dim for i in store.ids)


def write_packed(path: str | Path, store: EmbeddingStore) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_PACKED_HEADER.pack(PACKED_MAGIC, store.dim, len(store)))
        for n, ident in enumerate(store.ids):
            raw = ident.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(store.matrix[n].astype("<f4").tobytes())


def read_packed(path: str | Path) -> EmbeddingStore:
    data = _require_file(path).read_bytes()
    if len(data) < _PACKED_HEADER.size:
        raise CorruptHeader(f"{path}: file shorter than header")
    magic, dim, count = _PACKED_HEADER.unpack_from(data, 0)
    if magic != PACKED_MAGIC:
        raise CorruptHeader(f"{path}: bad magic {magic!r}")
    if dim == 0:
        raise CorruptHeader(f"{path}: zero dimension")
    off = _PACKED_HEADER.size
    ids, vecs = [], np.empty((count, dim), dtype=np.float32)
    for n in range(count):
        if off + 4 > len(data):
            raise CorruptHeader(f"{path}: truncated at entry {n}")
        (ln,) = struct.unpack_from("<I", data, off)
        off += 4
        end = off + ln + 4 * dim
        if end > len(data):
            raise CorruptHeader(f"{path}: truncated at entry {n}")
        ids.append(data[off : off + ln].decode("utf-8"))
        vecs[n] = np.frombuffer(data, dtype="<f4", count=dim, offset=off + ln)
        off = end
    if off != len(data):
        raise CorruptHeader(f"{path}: {len(data) - off} trailing bytes")
    return EmbeddingStore(int(dim), ids, vecs)


def write_jsonl_store(path: str | Path, store: EmbeddingStore) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"dim": store.dim, "count": len(store)}) + "\n")
        for n, ident in enumerate(store.ids):
            vec = store.matrix[n].tolist()
            fh.write(json.dumps({"id": ident, "vector": vec}, ensure_ascii=False) + "\n")


def read_jsonl_store(path: str | Path) -> EmbeddingStore:
    rows = read_jsonl(path)
    if not rows or "dim" not in rows[0]:
        raise CorruptHeader(f"{path}: missing header line with 'dim'")
    header, entries = rows[0], rows[1:]
    dim = header["dim"]
    if not isinstance(dim, int) or dim <= 0:
        raise CorruptHeader(f"{path}: invalid dim {dim!r}")
    if "count" in header and header["count"] != len(entries):
        raise CorruptHeader(f"{path}: header count {header['count']} != {len(entries)} entries")
    ids, vecs = [], []
    for row in entries:
        vec = row["vector"]
        if len(vec) != dim:
            raise DimensionMismatch(f"vector {row['id']!r} has {len(vec)} components, declared dim {dim}")
        if not all(isinstance(x, (int, float)) and math.isfinite(x) for x in vec):
            raise SchemaViolation(f"vector {row['id']!r} has non-finite components")
        ids.append(str(row["id"]))
        vecs.append(vec)
    return EmbeddingStore(dim, ids, np.asarray(vecs, dtype=np.float32).reshape(len(ids), dim))


def _is_packed(path: Path) -> bool:
    with open(path, "rb") as fh:
        return fh.read(4) == PACKED_MAGIC


def embedding_store_io(path: str | Path, mode: str, store: EmbeddingStore | None = None, fmt: str | None = None):
    """Read or write an embedding store.

    ``fmt`` is ``"packed"`` or ``"jsonl"``; when reading it is sniffed from
    the magic bytes, when writing it defaults from the file suffix
    (``.jsonl`` -> canonical JSONL, anything else -> packed).
    """
    path = Path(path)
    if mode == "write":
        if store is None:
            raise ValueError("write mode requires a store")
        fmt = fmt or ("jsonl" if path.suffix == ".jsonl" else "packed")
        (write_jsonl_store if fmt == "jsonl" else write_packed)(path, store)
        return store
    if mode == "read":
        _require_file(path)
        if fmt is None:
            fmt = "packed" if _is_packed(path) else "jsonl"
        return read_packed(path) if fmt == "packed" else read_jsonl_store(path)
    raise ValueError(f"mode must be 'read' or 'write', got {mode!r}")
