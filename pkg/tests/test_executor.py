import numpy as np
import pytest
from conftest import CANONICAL_GRAPHS, extend, nnz, row_div_graph, rows, tpb
from hypothesis import given, settings
from hypothesis import strategies as st

from spmvgen.errors import DimensionMismatch, MissingKey, OutOfBoundsRead, ScratchOverflow
from spmvgen.executor import (
    SCRATCH_BYTES,
    _warp_segmented,
    benchmark,
    execute_plan,
    gflops_of,
)
from spmvgen.matio import from_triplets, spmv_oracle
from spmvgen.opgraph import OperatorGraph
from spmvgen.search import compile_design, oracle_tolerance, random_design
from spmvgen.synthetic import random_matrix

ALL = sorted(CANONICAL_GRAPHS) + ["row_div"]


def graph(name):
    return row_div_graph() if name == "row_div" else CANONICAL_GRAPHS[name]()


@pytest.mark.parametrize("mode", ["deterministic", "parallel"])
@pytest.mark.parametrize("name", ALL)
@pytest.mark.parametrize("compress", [False, True])
def test_canonical_designs_match_oracle(A, name, mode, compress):
    plan, fmt = compile_design(graph(name), A, compress=compress)
    assert execute_plan(plan, fmt, np.ones(4), mode=mode).tolist() == [3, 3, 15, 7]
    assert execute_plan(plan, fmt, np.arange(1.0, 5.0), mode=mode).tolist() == [7, 6, 38, 28]


def test_col_div_partials_sum_to_oracle(A):
    g = OperatorGraph()
    d = g.add(0, "COL_DIV", {"cuts": [2]})
    extend(g, d, "COMPRESS", ("BMT_ROW_BLOCK", rows(1)), tpb(), "THREAD_TOTAL_RED",
           "GMEM_ATOM_RED")
    extend(g, d, "COMPRESS", ("BMW_NNZ_BLOCK", nnz(2)), ("BMT_NNZ_BLOCK", nnz(1)), tpb(),
           "WARP_SEG_RED", "GMEM_ATOM_RED")
    plan, fmt = compile_design(g, A)
    x = np.array([0.5, -1.0, 2.0, 3.0])
    np.testing.assert_allclose(execute_plan(plan, fmt, x), spmv_oracle(A, x), rtol=0, atol=1e-14)


def test_missing_array(A):
    plan, fmt = compile_design(CANONICAL_GRAPHS["csr_scalar"](), A, compress=False)
    with pytest.raises(MissingKey):
        execute_plan(plan, fmt.without("col_indices"), np.ones(4))


def test_corrupt_column_index_is_out_of_bounds(A):
    plan, fmt = compile_design(CANONICAL_GRAPHS["csr_scalar"](), A, compress=False)
    bad = fmt["col_indices"].copy()
    bad[3] = 99
    fmt.arrays["col_indices"] = bad
    with pytest.raises(OutOfBoundsRead):
        execute_plan(plan, fmt, np.ones(4))


def test_x_shape_checked(A):
    plan, fmt = compile_design(CANONICAL_GRAPHS["csr_scalar"](), A)
    with pytest.raises(DimensionMismatch):
        execute_plan(plan, fmt, np.ones(5))


def test_unknown_mode(A):
    plan, fmt = compile_design(CANONICAL_GRAPHS["csr_scalar"](), A)
    with pytest.raises(ValueError):
        execute_plan(plan, fmt, np.ones(4), mode="eventual")


def test_scratch_overflow():
    n = SCRATCH_BYTES // 8 + 1
    m = from_triplets(1, n, np.zeros(n, int), np.arange(n), np.ones(n))
    g = OperatorGraph.chain("COMPRESS", ("BMTB_ROW_BLOCK", rows(1)), ("BMT_NNZ_BLOCK", nnz(1)),
                            tpb(), "THREAD_TOTAL_RED", "SHMEM_TOTAL_RED", "GMEM_ATOM_RED")
    plan, fmt = compile_design(g, m)
    with pytest.raises(ScratchOverflow):
        execute_plan(plan, fmt, np.ones(n))


def test_f32_plan_within_single_precision(A):
    plan, fmt = compile_design(CANONICAL_GRAPHS["sell"](), A, precision="f32")
    y = execute_plan(plan, fmt, np.ones(4))
    assert y.dtype == np.float32
    np.testing.assert_allclose(y, [3, 3, 15, 7], rtol=1e-6)


def test_gflops_formula():
    assert gflops_of(7, 1e-6) == pytest.approx(0.014)
    assert gflops_of(7, 0.0) == 0.0


def test_benchmark_model_clock_is_deterministic(A):
    plan, fmt = compile_design(CANONICAL_GRAPHS["sell"](), A)
    a = benchmark(plan, fmt, np.ones(4), reps=3, clock="model")
    b = benchmark(plan, fmt, np.ones(4), reps=3, clock="model")
    assert a.elapsed_seconds == b.elapsed_seconds > 0
    assert a.gflops == pytest.approx(2 * 7 / a.elapsed_seconds / 1e9)
    assert a.y.tolist() == [3, 3, 15, 7]
    assert a.clock == "model"


def test_benchmark_wall_clock_takes_median(A):
    plan, fmt = compile_design(CANONICAL_GRAPHS["csr_scalar"](), A)
    rep = benchmark(plan, fmt, np.ones(4), reps=3, warmup=0, clock="wall")
    assert len(rep.samples) == 3
    assert rep.elapsed_seconds == sorted(rep.samples)[1]


@pytest.mark.parametrize("kw", [{"reps": 0}, {"clock": "sundial"}])
def test_benchmark_argument_checks(A, kw):
    plan, fmt = compile_design(CANONICAL_GRAPHS["csr_scalar"](), A)
    with pytest.raises(ValueError):
        benchmark(plan, fmt, np.ones(4), **kw)


def test_bytes_touched_counts_padding(A):
    p1, f1 = compile_design(CANONICAL_GRAPHS["csr_scalar"](), A, compress=False)
    p2, f2 = compile_design(CANONICAL_GRAPHS["ell"](), A, compress=False)
    b1 = benchmark(p1, f1, np.ones(4), clock="model").bytes_touched
    b2 = benchmark(p2, f2, np.ones(4), clock="model").bytes_touched
    assert b2 > b1


@settings(max_examples=50, deadline=None)
@given(st.lists(st.booleans(), min_size=1, max_size=100), st.integers(0, 2**32 - 1))
def test_warp_segmented_matches_segment_sums(heads, seed):
    heads = np.array(heads, dtype=bool)
    heads[0] = True
    v = np.random.default_rng(seed).uniform(-1, 1, len(heads))
    group = np.zeros(len(v), dtype=np.int64)
    got = _warp_segmented(v, group, heads)
    seg = np.cumsum(heads) - 1
    want = np.bincount(seg, weights=v)
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_random_designs_match_oracle_in_both_modes(seed):
    rng = np.random.default_rng(seed)
    m = random_matrix(rng)
    x = rng.uniform(-1, 1, m.n_cols)
    g = random_design(rng, m)
    ref = spmv_oracle(m, x)
    tol = oracle_tolerance(m, x)
    plan, fmt = compile_design(g, m)
    for mode in ("deterministic", "parallel"):
        assert np.abs(execute_plan(plan, fmt, x, mode=mode) - ref).max() <= tol
