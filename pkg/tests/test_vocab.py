import json
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from embedforge.errors import CorruptHeader, InvalidCounts, SchemaViolation, TargetTooSmall, UnknownSpecial
from embedforge.vocab import (
    EmbeddingMatrix,
    read_matrix,
    read_token_stats,
    reduction_ratio,
    trim_vocabulary,
    write_id_map,
    write_matrix,
)

PAD = "<pad>"


def example_matrix():
    rows = np.arange(12, dtype=np.float32).reshape(6, 2) / 7
    return EmbeddingMatrix((PAD, "a", "b", "c", "d", "e"), rows)


def oracle_keep(tokens, counts, target, specials):
    """Hand rule: specials, then highest counts with lower index winning ties."""
    rest = [i for i, t in enumerate(tokens) if t not in specials]
    best = sorted(rest, key=lambda i: (-counts.get(tokens[i], 0), i))[: target - len(specials)]
    return [tokens.index(s) for s in specials] + sorted(best)


@st.composite
def trim_cases(draw):
    v = draw(st.integers(1, 30))
    d = draw(st.integers(1, 4))
    tokens = tuple(f"t{i}" for i in range(v))
    rows = draw(
        st.lists(st.floats(-1e6, 1e6, width=32), min_size=v * d, max_size=v * d).map(
            lambda xs: np.array(xs, dtype=np.float32).reshape(v, d)
        )
    )
    counts = {t: draw(st.integers(0, 5)) for t in tokens}
    specials = draw(st.lists(st.sampled_from(tokens), max_size=min(3, v), unique=True))
    target = draw(st.integers(len(specials), v))
    return EmbeddingMatrix(tokens, rows), counts, target, specials


class TestTrim:
    def test_example(self):
        mat = example_matrix()
        counts = {"a": 9, "b": 7, "c": 5, "d": 1, "e": 0}
        new, id_map = trim_vocabulary(mat, counts, 3, [PAD])
        assert new.tokens == (PAD, "a", "b")
        assert new.vocab_size == 3
        assert id_map == {0: 0, 1: 1, 2: 2}
        assert new.rows.tobytes() == mat.rows[:3].tobytes()

    def test_identity(self):
        mat = example_matrix()
        new, id_map = trim_vocabulary(mat, {"c": 3}, 6, [PAD])
        assert new.tokens == mat.tokens
        assert id_map == {i: i for i in range(6)}
        np.testing.assert_array_equal(new.rows, mat.rows)

    def test_tie_goes_to_lower_index(self):
        mat = example_matrix()
        new, _ = trim_vocabulary(mat, {"a": 1, "b": 5, "c": 5, "d": 5}, 3, [PAD])
        assert new.tokens == (PAD, "b", "c")

    def test_specials_first_then_index_order(self):
        mat = example_matrix()
        new, id_map = trim_vocabulary(mat, {"a": 1, "e": 9, PAD: 0}, 3, ["d", PAD])
        assert new.tokens == ("d", PAD, "e")
        assert id_map == {4: 0, 0: 1, 5: 2}

    def test_unknown_special(self):
        with pytest.raises(UnknownSpecial):
            trim_vocabulary(example_matrix(), {}, 3, ["<mask>"])

    def test_target_too_small(self):
        with pytest.raises(TargetTooSmall):
            trim_vocabulary(example_matrix(), {}, 1, [PAD, "a"])

    @given(trim_cases())
    def test_matches_oracle_and_copies_rows(self, case):
        mat, counts, target, specials = case
        new, id_map = trim_vocabulary(mat, counts, target, specials)
        keep = oracle_keep(list(mat.tokens), counts, target, specials)
        assert new.tokens == tuple(mat.tokens[i] for i in keep)
        assert sorted(id_map.values()) == list(range(target))
        for old, nw in id_map.items():
            assert new.rows[nw].tobytes() == mat.rows[old].tobytes()
        assert set(specials) <= set(new.tokens)

    @given(trim_cases(), st.integers(0, 30))
    def test_monotone_in_target(self, case, extra):
        mat, counts, target, specials = case
        bigger = min(mat.vocab_size, target + extra)
        small = set(trim_vocabulary(mat, counts, target, specials)[0].tokens)
        large = set(trim_vocabulary(mat, counts, bigger, specials)[0].tokens)
        assert small <= large


class TestRatio:
    @pytest.mark.parametrize(
        "dim,total,want,quoted",
        [(384, 118e6, 0.651, 0.66), (768, 278e6, 0.552, 0.55), (1024, 560e6, 0.366, 0.37)],
    )
    def test_model_sizes(self, dim, total, want, quoted):
        r = reduction_ratio(250002, 50000, dim, int(total))
        assert r == (250002 - 50000) * dim / int(total)
        # quoted values are truncated to three places
        assert r == pytest.approx(want, abs=1e-3)
        assert abs(100 * r - 100 * quoted) <= 1.5

    def test_exact_formula(self):
        assert reduction_ratio(10, 4, 3, 100) == pytest.approx(0.18)

    @pytest.mark.parametrize("args", [(10, 4, 3, 18), (4, 10, 3, 100), (10, 4, 0, 100), (10, 4, 3, -1)])
    def test_invalid(self, args):
        with pytest.raises(InvalidCounts):
            reduction_ratio(*args)


class TestMatrixType:
    def test_shape_mismatch(self):
        with pytest.raises(SchemaViolation):
            EmbeddingMatrix(("a", "b"), np.zeros((3, 2)))

    def test_duplicates(self):
        with pytest.raises(SchemaViolation):
            EmbeddingMatrix(("a", "a"), np.zeros((2, 2)))

    def test_non_finite(self):
        with pytest.raises(SchemaViolation):
            EmbeddingMatrix(("a",), np.array([[np.inf, 0.0]]))


class TestFiles:
    def test_round_trip(self, tmp_path):
        mat = EmbeddingMatrix(("<s>", "héllo", "ß"), np.random.default_rng(0).normal(size=(3, 4)))
        write_matrix(tmp_path / "m.vmat", mat)
        back = read_matrix(tmp_path / "m.vmat")
        assert back.tokens == mat.tokens
        assert back.rows.tobytes() == mat.rows.tobytes()

    def test_layout(self, tmp_path):
        write_matrix(tmp_path / "m.vmat", EmbeddingMatrix(("ab",), np.array([[1.0, -2.0]])))
        raw = (tmp_path / "m.vmat").read_bytes()
        assert raw[:4] == b"VMAT"
        assert struct.unpack("<III", raw[4:16]) == (1, 2, 1)
        assert raw[16:22] == struct.pack("<I", 2) + b"ab"
        assert np.frombuffer(raw[22:], "<f4").tolist() == [1.0, -2.0]

    @pytest.mark.parametrize("mutate", [lambda b: b"XMAT" + b[4:], lambda b: b[:-1], lambda b: b[:10]])
    def test_corrupt(self, tmp_path, mutate):
        write_matrix(tmp_path / "m.vmat", example_matrix())
        p = tmp_path / "m.vmat"
        p.write_bytes(mutate(p.read_bytes()))
        with pytest.raises(CorruptHeader):
            read_matrix(p)

    def test_stats_and_id_map(self, tmp_path):
        (tmp_path / "s.tsv").write_text("a\t3\nb c\t0\n\n")
        assert read_token_stats(tmp_path / "s.tsv") == {"a": 3, "b c": 0}
        (tmp_path / "bad.tsv").write_text("a\t-1\n")
        with pytest.raises(SchemaViolation):
            read_token_stats(tmp_path / "bad.tsv")
        write_id_map(tmp_path / "m.json", {5: 1, 0: 0})
        assert json.loads((tmp_path / "m.json").read_text()) == {"0": 0, "5": 1}
