import json
import struct

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from embedforge.dataset_io import (
    CATEGORIES,
    CATEGORY_KEYS,
    EmbeddingStore,
    LabeledExample,
    RetrievalCollection,
    Triplet,
    embedding_store_io,
    load_labeled,
    load_retrieval_collection,
    load_triplets,
    packed_size,
    read_packed,
    triplet_from_record,
    write_jsonl,
    write_triplets,
)
from embedforge.errors import (
    CorruptHeader,
    DanglingReference,
    DimensionMismatch,
    FileMissing,
    MissingEmbedding,
    SchemaViolation,
)


class TestLoadTriplets:
    def test_single_valid_line(self, tmp_path):
        p = tmp_path / "t.jsonl"
        p.write_text(json.dumps({"user-query": "q", "positive-document": "p", "hard-negative-document": "n"}) + "\n")
        ts = load_triplets(p, "short-long")
        assert len(ts) == 1 and ts.rejection_count == 0
        t = ts.triplets[0]
        assert (t.query, t.positive, t.negative, t.category) == ("q", "p", "n", "short-long")

    def test_missing_key_is_rejected(self, tmp_path):
        p = tmp_path / "t.jsonl"
        p.write_text(json.dumps({"user-query": "q", "hard-negative-document": "n"}) + "\n")
        ts = load_triplets(p, "short-long")
        assert len(ts) == 0
        assert ts.rejections == [(1, "missing key")]

    def test_fixture_three_valid_one_invalid(self, fixtures):
        ts = load_triplets(fixtures / "triplets_3valid_1invalid.jsonl", "short-long")
        assert len(ts) == 3
        assert ts.rejection_count == 1
        assert ts.rejections[0][0] == 3

    def test_invalid_json_line(self, tmp_path):
        p = tmp_path / "t.jsonl"
        p.write_text('{"user-query": \n')
        ts = load_triplets(p, "short-long")
        assert ts.rejections == [(1, "invalid json")]

    def test_file_missing(self, tmp_path):
        with pytest.raises(FileMissing):
            load_triplets(tmp_path / "nope.jsonl", "short-long")

    def test_nfc_normalisation(self, tmp_path):
        p = tmp_path / "t.jsonl"
        decomposed = "café"
        p.write_text(json.dumps({"input": decomposed, "positive-document": "p", "hard-negative-document": "n"}) + "\n")
        t = load_triplets(p, "short-short").triplets[0]
        assert t.query == "café"

    @pytest.mark.parametrize("category", CATEGORIES)
    def test_category_keys(self, category):
        qk, pk, nk = CATEGORY_KEYS[category]
        rec = {qk: "a", pk: "b", nk: "c"}
        if category == "sts":
            rec.update({"high-score": 4.5, "low-score": 3})
        t = triplet_from_record(rec, category)
        assert t.category == category
        assert t.id  # content id assigned

    def test_sts_score_invariants(self):
        rec = {"S1": "a", "S2": "b", "S3": "c", "high-score": 3, "low-score": 4}
        with pytest.raises(SchemaViolation):
            triplet_from_record(rec, "sts")
        rec.update({"high-score": 6})
        with pytest.raises(SchemaViolation):
            triplet_from_record(rec, "sts")

    def test_mixed_categories_round_trip(self, tmp_path):
        a = Triplet("x1", "short-long", "q", "p", "n", meta={"model": "m"})
        b = Triplet("x2", "sts", "s1", "s2", "s3", high_score=4.5, low_score=3.0)
        write_triplets(tmp_path / "o.jsonl", [a, b])
        back = load_triplets(tmp_path / "o.jsonl")
        assert back.triplets == [a, b]


texts = st.text(min_size=0, max_size=6)
junk_values = st.one_of(texts, st.integers(), st.none(), st.lists(st.integers(), max_size=2))


@settings(suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(
    st.lists(
        st.dictionaries(
            st.sampled_from(["user-query", "positive-document", "hard-negative-document", "id", "meta", "x"]),
            junk_values,
            max_size=5,
        ),
        max_size=8,
    )
)
def test_loader_never_emits_invalid_triplets(tmp_path, records):
    p = tmp_path / "fuzz.jsonl"
    p.write_text("".join(json.dumps(r) + "\n" for r in records) + "not json\n")
    ts = load_triplets(p, "short-long")
    assert len(ts) + ts.rejection_count == len(records) + 1
    for t in ts:
        assert t.query.strip() and t.positive.strip() and t.negative.strip()
        Triplet(t.id, t.category, t.query, t.positive, t.negative, t.source, t.meta)


@given(
    st.lists(
        st.tuples(st.text(min_size=1, max_size=8).filter(str.strip), st.text(min_size=1, max_size=8).filter(str.strip)),
        min_size=1,
        max_size=6,
        unique_by=lambda x: x[0],
    )
)
def test_triplet_round_trip(tmp_path_factory, rows):
    import unicodedata

    d = tmp_path_factory.mktemp("rt")
    ts = [
        Triplet(f"id{i}", "short-short", unicodedata.normalize("NFC", q), unicodedata.normalize("NFC", p), "neg")
        for i, (q, p) in enumerate(rows)
    ]
    write_triplets(d / "a.jsonl", ts)
    assert load_triplets(d / "a.jsonl", "short-short").triplets == ts


def _write_collection(d, corpus, queries, qrels):
    write_jsonl(d / "corpus.jsonl", corpus)
    write_jsonl(d / "queries.jsonl", queries)
    (d / "qrels.tsv").write_text(qrels)


class TestRetrievalCollection:
    def test_minimal(self, tmp_path):
        _write_collection(
            tmp_path,
            [{"_id": "d1", "text": "one"}, {"_id": "d2", "title": "T", "text": "two"}],
            [{"_id": "q1", "text": "query"}],
            "q1\td1\t1\n",
        )
        coll = load_retrieval_collection(tmp_path)
        assert coll.n_judged == 1
        assert coll.qrels == {"q1": {"d1": 1}}
        assert coll.corpus["d2"].startswith("T")

    def test_dangling_doc(self, tmp_path):
        _write_collection(tmp_path, [{"_id": "d1", "text": "x"}], [{"_id": "q1", "text": "q"}], "q1\td9\t1\n")
        with pytest.raises(DanglingReference) as exc:
            load_retrieval_collection(tmp_path)
        assert exc.value.ref == "d9"

    def test_graded_relevance_preserved(self, tmp_path):
        _write_collection(tmp_path, [{"_id": "d1", "text": "x"}], [{"_id": "q1", "text": "q"}], "q1\td1\t2\n")
        assert load_retrieval_collection(tmp_path).qrels["q1"]["d1"] == 2

    def test_negative_grade_rejected(self):
        with pytest.raises(SchemaViolation):
            RetrievalCollection({"d": "x"}, {"q": "y"}, {"q": {"d": -1}})

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileMissing):
            load_retrieval_collection(tmp_path)


class TestLabeled:
    def test_label_and_labels_keys(self, tmp_path):
        write_jsonl(tmp_path / "l.jsonl", [{"id": "a", "text": "x", "label": "pos"}, {"id": "b", "text": "y", "labels": ["p", "q"]}])
        ex = load_labeled(tmp_path / "l.jsonl")
        assert ex[0].labels == ("pos",) and ex[1].labels == ("p", "q")

    def test_duplicate_labels_rejected(self):
        with pytest.raises(SchemaViolation):
            LabeledExample("a", "x", ("p", "p"))


class TestEmbeddingStore:
    @pytest.mark.parametrize("suffix", [".emb", ".jsonl"])
    def test_round_trip_small(self, tmp_path, suffix):
        store = EmbeddingStore.from_dict({"a": [1, 0], "b": [0, 1]})
        embedding_store_io(tmp_path / f"s{suffix}", "write", store)
        assert embedding_store_io(tmp_path / f"s{suffix}", "read") == store

    def test_declared_dim_mismatch(self, tmp_path):
        p = tmp_path / "bad.jsonl"
        p.write_text('{"dim": 3, "count": 1}\n{"id": "a", "vector": [1.0, 2.0]}\n')
        with pytest.raises(DimensionMismatch):
            embedding_store_io(p, "read")

    def test_packed_byte_length(self, tmp_path):
        store = EmbeddingStore.from_dict({"a": [1, 0, 0], "bb": [0, 1, 0], "ccc": [0, 0, 1]})
        p = tmp_path / "s.emb"
        embedding_store_io(p, "write", store)
        expected = 16 + (4 + 1 + 12) + (4 + 2 + 12) + (4 + 3 + 12)
        assert packed_size(store) == expected == p.stat().st_size == 70

    def test_packed_header_layout(self, tmp_path):
        p = tmp_path / "s.emb"
        embedding_store_io(p, "write", EmbeddingStore.from_dict({"x": [0.5, 2.0]}))
        raw = p.read_bytes()
        assert raw[:4] == b"EMB1"
        assert struct.unpack_from("<IQ", raw, 4) == (2, 1)
        assert struct.unpack_from("<I", raw, 16) == (1,)
        assert raw[20:21] == b"x"
        assert np.frombuffer(raw[21:], "<f4").tolist() == [0.5, 2.0]

    @pytest.mark.parametrize("damage", ["magic", "truncate", "trailing"])
    def test_corrupt(self, tmp_path, damage):
        p = tmp_path / "s.emb"
        embedding_store_io(p, "write", EmbeddingStore.from_dict({"x": [0.5, 2.0]}))
        raw = p.read_bytes()
        raw = {"magic": b"XXXX" + raw[4:], "truncate": raw[:-3], "trailing": raw + b"\0"}[damage]
        p.write_bytes(raw)
        with pytest.raises(CorruptHeader):
            read_packed(p)

    def test_rows_and_missing(self):
        store = EmbeddingStore.from_dict({"a": [1, 2], "b": [3, 4]})
        np.testing.assert_array_equal(store.rows(["b", "a"]), [[3, 4], [1, 2]])
        with pytest.raises(MissingEmbedding):
            store.rows(["zz"])

    def test_non_finite_rejected(self):
        with pytest.raises(SchemaViolation):
            EmbeddingStore(1, ["a"], [[np.nan]])

    def test_immutable(self):
        store = EmbeddingStore.from_dict({"a": [1, 2]})
        with pytest.raises(ValueError):
            store.matrix[0, 0] = 5


finite32 = st.floats(allow_nan=False, allow_infinity=False, width=32)


@given(st.integers(1, 5), st.lists(st.text(min_size=1, max_size=5), min_size=1, max_size=6, unique=True), st.data())
def test_store_round_trip_bit_exact(tmp_path_factory, dim, ids, data):
    d = tmp_path_factory.mktemp("emb")
    vals = data.draw(st.lists(finite32, min_size=dim * len(ids), max_size=dim * len(ids)))
    store = EmbeddingStore(dim, ids, np.array(vals, dtype=np.float32).reshape(len(ids), dim))
    for name in ("s.emb", "s.jsonl"):
        embedding_store_io(d / name, "write", store)
        back = embedding_store_io(d / name, "read")
        assert back == store
        assert back.matrix.tobytes() == store.matrix.tobytes()
