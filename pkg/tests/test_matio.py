import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spmvgen.errors import (
    DimensionMismatch,
    DuplicateEntry,
    EmptyRow,
    IndexOutOfRange,
    MalformedHeader,
)
from spmvgen.matio import (
    compute_stats,
    from_triplets,
    parse_matrix_market,
    read_coo_cache,
    read_matrix_market,
    spmv_oracle,
    to_matrix_market,
    write_coo_cache,
    write_matrix_market,
)
from spmvgen.synthetic import GENERATORS, random_matrix

CANONICAL_MTX = """%%MatrixMarket matrix coordinate real general
% canonical 4x4
4 4 7
1 1 1
1 3 2
2 2 3
3 1 4
3 2 5
3 4 6
4 4 7
"""


def test_parse_canonical(A):
    m = parse_matrix_market(CANONICAL_MTX)
    assert m == A
    assert m.nnz == 7
    assert m.row_lengths().tolist() == [2, 1, 3, 1]


def test_parse_accepts_bytes_and_unsorted_entries():
    text = "%%MatrixMarket matrix coordinate real general\n2 2 2\n2 1 5.0\n1 2 4.0\n"
    m = parse_matrix_market(text.encode())
    assert m.row_idx.tolist() == [0, 1]
    assert m.col_idx.tolist() == [1, 0]
    assert m.values.tolist() == [4.0, 5.0]


def test_symmetric_expansion():
    text = "%%MatrixMarket matrix coordinate real symmetric\n2 2 2\n1 1 1.0\n2 1 3.0\n"
    m = parse_matrix_market(text)
    got = sorted(zip(m.row_idx.tolist(), m.col_idx.tolist(), m.values.tolist()))
    assert got == [(0, 0, 1.0), (0, 1, 3.0), (1, 0, 3.0)]


def test_pattern_field_gives_unit_values():
    m = parse_matrix_market("%%MatrixMarket matrix coordinate pattern general\n2 2 2\n1 1\n2 2\n")
    assert m.values.tolist() == [1.0, 1.0]


@pytest.mark.parametrize("text,err", [
    ("", MalformedHeader),
    ("%%MatrixMarket matrix array real general\n2 2\n1\n2\n3\n4\n", MalformedHeader),
    ("%%MatrixMarket matrix coordinate complex general\n1 1 1\n1 1 1 0\n", MalformedHeader),
    ("%%MatrixMarket matrix coordinate real hermitian\n1 1 1\n1 1 1\n", MalformedHeader),
    ("%%MatrixMarket matrix coordinate real general\n2 2 3\n1 1 1\n2 2 1\n", MalformedHeader),
    ("%%MatrixMarket matrix coordinate real general\n2 2 x\n", MalformedHeader),
    ("%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1\n3 1 1\n", IndexOutOfRange),
    ("%%MatrixMarket matrix coordinate real general\n2 2 3\n1 1 1\n1 1 2\n2 2 1\n",
     DuplicateEntry),
    ("%%MatrixMarket matrix coordinate real general\n3 3 2\n1 1 1\n3 3 1\n", EmptyRow),
    ("%%MatrixMarket matrix coordinate real symmetric\n2 2 2\n1 2 1\n2 2 1\n", IndexOutOfRange),
])
def test_parse_errors(text, err):
    with pytest.raises(err):
        parse_matrix_market(text)


def test_from_triplets_rejects_length_mismatch():
    with pytest.raises(DimensionMismatch):
        from_triplets(2, 2, [0, 1], [0], [1.0, 2.0])


def test_matrix_arrays_are_read_only(A):
    with pytest.raises(ValueError):
        A.values[0] = 9.0


def test_stats_canonical(A):
    s = compute_stats(A)
    assert s.avg_row_len == pytest.approx(1.75)
    assert s.row_len_variance == pytest.approx(0.6875)
    assert (s.max_row_len, s.min_row_len) == (3, 1)
    assert not s.is_irregular


def test_irregular_boundary_is_strict():
    # lengths [1, 21]: avg 11, variance exactly 100
    rows = [0] + [1] * 21
    cols = [0] + list(range(21))
    s = compute_stats(from_triplets(2, 21, rows, cols, np.ones(22)))
    assert s.row_len_variance == pytest.approx(100.0)
    assert not s.is_irregular


def test_oracle_canonical(A):
    assert spmv_oracle(A, np.ones(4)).tolist() == [3.0, 3.0, 15.0, 7.0]
    assert spmv_oracle(A, [1, 2, 3, 4]).tolist() == [7.0, 6.0, 38.0, 28.0]


def test_oracle_shape_check(A):
    with pytest.raises(DimensionMismatch):
        spmv_oracle(A, np.ones(3))


def test_inf_norm(A):
    assert A.inf_norm() == 15.0


@pytest.mark.parametrize("name", sorted(GENERATORS))
def test_generators_have_no_empty_rows(name):
    m = GENERATORS[name](np.random.default_rng(0), n=200)
    assert m.n_rows == 200
    assert m.row_lengths().min() >= 1


def test_file_round_trips(tmp_path, A):
    write_matrix_market(A, tmp_path / "a.mtx")
    assert read_matrix_market(tmp_path / "a.mtx") == A
    write_coo_cache(A, tmp_path / "a.coo")
    assert read_coo_cache(tmp_path / "a.coo") == A


def test_coo_cache_rejects_foreign_file(tmp_path):
    p = tmp_path / "bad.coo"
    p.write_bytes(b"not a cache")
    with pytest.raises(MalformedHeader):
        read_coo_cache(p)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_text_round_trip_is_exact(seed):
    m = random_matrix(np.random.default_rng(seed), max_dim=20)
    assert parse_matrix_market(to_matrix_market(m)) == m


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_oracle_matches_dense_product(seed):
    rng = np.random.default_rng(seed)
    m = random_matrix(rng, max_dim=24)
    x = rng.uniform(-1, 1, m.n_cols)
    np.testing.assert_allclose(spmv_oracle(m, x), m.todense() @ x, rtol=1e-12, atol=1e-12)
