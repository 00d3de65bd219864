import numpy as np
import pytest

from spmvgen.opgraph import OperatorGraph
from spmvgen.synthetic import canonical_matrix


def tpb(n=128):
    return ("SET_RESOURCES", {"threads_per_block": n})


def rows(n):
    return {"rows_per_block": n}


def nnz(n):
    return {"nnz_per_block": n}


# Designs on the 4x4 canonical matrix whose arrays are frozen in the tests.
CANONICAL_GRAPHS = {
    "csr_scalar": lambda: OperatorGraph.chain(
        "COMPRESS", ("BMT_ROW_BLOCK", rows(1)), tpb(), "THREAD_TOTAL_RED", "GMEM_ATOM_RED"),
    "ell": lambda: OperatorGraph.chain(
        "COMPRESS", ("BMT_ROW_BLOCK", rows(1)), ("BMT_PAD", {"scope": "global"}), tpb(),
        "THREAD_TOTAL_RED", "GMEM_ATOM_RED"),
    "sell": lambda: OperatorGraph.chain(
        "SORT", "COMPRESS", ("BMTB_ROW_BLOCK", rows(2)), ("BMT_ROW_BLOCK", rows(1)),
        ("BMT_PAD", {"scope": "per_bmtb"}), tpb(), "THREAD_TOTAL_RED", "GMEM_ATOM_RED"),
    "coo_like": lambda: OperatorGraph.chain(
        "COMPRESS", ("BMT_NNZ_BLOCK", nnz(2)), tpb(), "THREAD_BITMAP_RED", "GMEM_ATOM_RED"),
    "shmem_offset": lambda: OperatorGraph.chain(
        "COMPRESS", ("BMTB_ROW_BLOCK", rows(2)), tpb(), "SHMEM_OFFSET_RED", "GMEM_ATOM_RED"),
    "warp_seg": lambda: OperatorGraph.chain(
        "COMPRESS", ("BMW_NNZ_BLOCK", nnz(4)), ("BMT_NNZ_BLOCK", nnz(1)), tpb(64),
        "WARP_SEG_RED", "GMEM_ATOM_RED"),
    "warp_bitmap": lambda: OperatorGraph.chain(
        "COMPRESS", ("BMW_NNZ_BLOCK", nnz(3)), ("BMT_NNZ_BLOCK", nnz(1)), tpb(),
        "WARP_BITMAP_RED", "GMEM_ATOM_RED"),
    "warp_total": lambda: OperatorGraph.chain(
        "COMPRESS", ("BMW_ROW_BLOCK", rows(1)), ("BMT_NNZ_BLOCK", nnz(1)), tpb(),
        "THREAD_TOTAL_RED", "WARP_TOTAL_RED", "GMEM_ATOM_RED"),
    "shmem_total": lambda: OperatorGraph.chain(
        "COMPRESS", ("BMTB_ROW_BLOCK", rows(1)), ("BMT_NNZ_BLOCK", nnz(1)), tpb(),
        "THREAD_TOTAL_RED", "SHMEM_TOTAL_RED", "GMEM_ATOM_RED"),
    "bin": lambda: OperatorGraph.chain(
        ("BIN", {"thresholds": [2]}), "COMPRESS", ("BMT_ROW_BLOCK", rows(1)), tpb(),
        "THREAD_TOTAL_RED", "GMEM_ATOM_RED"),
}


def extend(g, parent, *ops):
    """Append a chain of ``kind`` or ``(kind, params)`` items below ``parent``."""
    for op in ops:
        kind, params = (op, {}) if not isinstance(op, tuple) else op
        parent = g.add(parent, kind, params)
    return parent


def row_div_graph():
    """Two stripes with different strategies: sorted CSR above, COO-like below."""
    g = OperatorGraph()
    d = g.add(0, "ROW_DIV", {"cuts": [2]})
    extend(g, d, ("SORT_SUB", {"group": 2}), "COMPRESS", ("BMT_ROW_BLOCK", rows(1)), tpb(),
           "THREAD_TOTAL_RED", "GMEM_ATOM_RED")
    extend(g, d, "COMPRESS", ("BMT_NNZ_BLOCK", nnz(2)), tpb(256), "THREAD_BITMAP_RED",
           "GMEM_ATOM_RED")
    return g


@pytest.fixture
def A():
    return canonical_matrix()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
