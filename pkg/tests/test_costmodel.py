import numpy as np
import pytest
from conftest import CANONICAL_GRAPHS, nnz, rows, tpb

from spmvgen.costmodel import DEFAULT_COSTS, CostConstants
from spmvgen.executor import benchmark
from spmvgen.opgraph import OperatorGraph
from spmvgen.search import compile_design
from spmvgen.synthetic import uniform_rows


def model_seconds(g, m, cost=None):
    plan, fmt = compile_design(g, m)
    return benchmark(plan, fmt, np.ones(m.n_cols), clock="model", cost=cost).elapsed_seconds


@pytest.mark.parametrize("name", sorted(CANONICAL_GRAPHS))
def test_launch_overhead_is_a_floor(A, name):
    s = model_seconds(CANONICAL_GRAPHS[name](), A)
    assert s >= DEFAULT_COSTS.launch / DEFAULT_COSTS.clock_hz


def test_more_rows_cost_more():
    g = CANONICAL_GRAPHS["csr_scalar"]
    times = [model_seconds(g(), uniform_rows(np.random.default_rng(0), n=n)) for n in
             (100, 1000, 4000)]
    assert times == sorted(times) and times[0] < times[-1]


def test_warp_per_row_beats_thread_per_row_on_long_rows():
    m = uniform_rows(np.random.default_rng(0), n=1000, row_len=64)
    vector = OperatorGraph.chain(
        "COMPRESS", ("BMW_ROW_BLOCK", rows(1)), ("BMT_NNZ_BLOCK", nnz(2)), tpb(),
        "THREAD_TOTAL_RED", "WARP_TOTAL_RED", "GMEM_ATOM_RED")
    assert model_seconds(vector, m) < model_seconds(CANONICAL_GRAPHS["csr_scalar"](), m)


def test_atomic_cost_only_affects_atomic_writes():
    m = uniform_rows(np.random.default_rng(1), n=500)
    pricey = CostConstants(atom=400.0)
    coo = CANONICAL_GRAPHS["coo_like"]()
    assert model_seconds(coo, m, pricey) > model_seconds(coo, m)
    # exclusive rows use plain stores after optimization
    csr = CANONICAL_GRAPHS["csr_scalar"]()
    assert model_seconds(csr, m, pricey) == model_seconds(csr, m)


def test_faster_clock_is_faster(A):
    g = CANONICAL_GRAPHS["sell"]()
    slow = model_seconds(g, A)
    fast = model_seconds(g, A, CostConstants(clock_hz=2 * DEFAULT_COSTS.clock_hz))
    assert fast == pytest.approx(slow / 2)
