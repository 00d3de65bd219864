import numpy as np
import pytest
from conftest import CANONICAL_GRAPHS, nnz, row_div_graph, rows, tpb
from hypothesis import given, settings
from hypothesis import strategies as st

from spmvgen.designer import execute_graph, reconstruct, row_lengths_at
from spmvgen.errors import BadThresholds, DesignError, InfeasibleDesign, InvalidGraph
from spmvgen.opgraph import OperatorGraph
from spmvgen.search import random_design
from spmvgen.synthetic import random_matrix


def ns0(g, m):
    return execute_graph(g, m)[0]


def arr(ns, key):
    return ns[key].tolist()


def test_compress_copies_coo(A):
    ns = ns0(OperatorGraph.chain("COMPRESS"), A)
    assert arr(ns, "row_lengths") == [2, 1, 3, 1]
    assert arr(ns, "col_indices") == [0, 2, 1, 0, 1, 3, 3]
    assert arr(ns, "values") == [1, 2, 3, 4, 5, 6, 7]


def test_row_div_partitions(A):
    g = OperatorGraph.chain(("ROW_DIV", {"cuts": [2]}))
    ms = execute_graph(g, A)
    assert len(ms) == 2
    top, bottom = ms[0], ms[1]
    assert (top.n_entries, bottom.n_entries) == (3, 4)
    assert arr(top, "row_indices") == [0, 0, 1]
    assert arr(bottom, "row_indices") == [0, 0, 0, 1]
    assert arr(bottom, "origin_rows") == [2, 3]


def test_col_div_keeps_only_touched_rows(A):
    g = OperatorGraph.chain(("COL_DIV", {"cuts": [2]}))
    left, right = execute_graph(g, A)
    assert arr(left, "origin_rows") == [0, 1, 2]
    assert arr(right, "origin_rows") == [0, 2, 3]


def test_sort(A):
    ns = ns0(OperatorGraph.chain("SORT"), A)
    assert arr(ns, "origin_rows") == [2, 0, 1, 3]
    assert arr(ns, "row_lengths") == [3, 2, 1, 1]


def test_bin(A):
    ns = ns0(OperatorGraph.chain(("BIN", {"thresholds": [2]})), A)
    assert arr(ns, "origin_rows") == [0, 1, 3, 2]
    assert arr(ns, "bin_offsets") == [0, 3, 4]


def test_bin_rejects_descending_thresholds(A):
    g = OperatorGraph.chain(("BIN", {"thresholds": [3, 1]}))
    with pytest.raises(InvalidGraph):
        execute_graph(g, A)
    with pytest.raises(BadThresholds):
        execute_graph(g, A, validate=False)


def test_sort_sub_sorts_within_groups(A):
    ns = ns0(OperatorGraph.chain(("SORT_SUB", {"group": 2})), A)
    assert arr(ns, "origin_rows") == [0, 1, 2, 3]
    ns = ns0(OperatorGraph.chain(("SORT_SUB", {"group": 4})), A)
    assert arr(ns, "origin_rows") == [2, 0, 1, 3]


def test_csr_scalar_arrays(A):
    ns = ns0(CANONICAL_GRAPHS["csr_scalar"](), A)
    assert arr(ns, "bmt_row_offsets") == [0, 1, 2, 3, 4]
    assert arr(ns, "bmt_nz_offsets") == [0, 2, 3, 6, 7]


def test_nnz_block_ceiling_split(A):
    ns = ns0(CANONICAL_GRAPHS["coo_like"](), A)
    assert arr(ns, "bmt_nz_offsets") == [0, 2, 4, 6, 7]
    assert arr(ns, "first_row_of_bmt") == [0, 1, 2, 3]
    assert arr(ns, "row_bitmap") == [0, 0, 0, 1, 0, 0, 0]


def test_ell_global_padding(A):
    ns = ns0(CANONICAL_GRAPHS["ell"](), A)
    assert ns.n_entries == 12
    assert arr(ns, "bmt_nz_offsets") == [0, 3, 6, 9, 12]
    assert arr(ns, "col_indices") == [0, 2, 2, 1, 1, 1, 0, 1, 3, 3, 3, 3]
    assert arr(ns, "values") == [1, 2, 0, 3, 0, 0, 4, 5, 6, 7, 0, 0]
    assert arr(ns, "pad_flags") == [0, 0, 1, 0, 1, 1, 0, 0, 0, 0, 1, 1]


def test_sell_arrays(A):
    ns = ns0(CANONICAL_GRAPHS["sell"](), A)
    assert arr(ns, "origin_rows") == [2, 0, 1, 3]
    assert arr(ns, "bmtb_nz_offsets") == [0, 6, 8]
    assert arr(ns, "bmtb_bmt_offsets") == [0, 2, 4]
    assert arr(ns, "bmt_row_offsets") == [0, 1, 2, 3, 4]
    assert arr(ns, "bmt_sizes_of_bmtb") == [3, 1]
    assert arr(ns, "bmt_nz_offsets") == [0, 3, 6, 7, 8]
    assert arr(ns, "values") == [4, 5, 6, 1, 2, 0, 3, 7]


def test_shmem_offset_row_offsets(A):
    ns = ns0(CANONICAL_GRAPHS["shmem_offset"](), A)
    assert arr(ns, "reduce_row_offsets") == [0, 2, 3, 0, 3, 4]


def test_sort_bmtb_sorts_each_block_independently(A):
    g = OperatorGraph.chain("COMPRESS", ("BMTB_ROW_BLOCK", rows(2)), "SORT_BMTB")
    ns = ns0(g, A)
    assert arr(ns, "origin_rows") == [0, 1, 2, 3]
    g = OperatorGraph.chain("COMPRESS", ("BMTB_ROW_BLOCK", rows(4)), "SORT_BMTB")
    assert arr(ns0(g, A), "origin_rows") == [2, 0, 1, 3]


def test_impl_choices_are_scalars(A):
    ns = ns0(CANONICAL_GRAPHS["csr_scalar"](), A)
    assert ns["threads_per_block"] == 128
    assert ns["gmem_atom_red"] == 1
    assert ns["thread_total_red"] == 1


def test_total_reduction_needs_single_row_blocks(A):
    g = OperatorGraph.chain("COMPRESS", ("BMT_NNZ_BLOCK", nnz(2)), tpb(), "THREAD_TOTAL_RED",
                            "GMEM_ATOM_RED")
    with pytest.raises(InfeasibleDesign) as info:
        execute_graph(g, A)
    assert info.value.node_id == 4


def test_bad_cuts_name_the_node(A):
    g = OperatorGraph.chain(("ROW_DIV", {"cuts": [7]}))
    with pytest.raises(DesignError) as info:
        execute_graph(g, A)
    assert info.value.node_id == 1


def test_row_lengths_at(A):
    g = OperatorGraph.chain("SORT", "COMPRESS", ("BMT_ROW_BLOCK", rows(1)))
    assert row_lengths_at(g, 3, A).tolist() == [3, 2, 1, 1]


def test_dump_mentions_every_namespace(A):
    text = execute_graph(row_div_graph(), A).dump()
    assert "[namespace 0]" in text and "[namespace 1]" in text


def test_arrays_are_immutable(A):
    ns = ns0(CANONICAL_GRAPHS["csr_scalar"](), A)
    with pytest.raises(ValueError):
        ns["values"][0] = 0.0


@pytest.mark.parametrize("name", sorted(CANONICAL_GRAPHS))
def test_real_entries_preserved(A, name):
    ms = execute_graph(CANONICAL_GRAPHS[name](), A)
    r, c, v = reconstruct(ms[0])
    assert (r.tolist(), c.tolist(), v.tolist()) == (
        A.row_idx.tolist(), A.col_idx.tolist(), A.values.tolist())


def test_divided_namespaces_cover_matrix(A):
    ms = execute_graph(row_div_graph(), A)
    parts = [reconstruct(ns) for ns in ms]
    r = np.concatenate([p[0] for p in parts])
    assert sorted(r.tolist()) == sorted(A.row_idx.tolist())


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_random_designs_preserve_entries(seed):
    rng = np.random.default_rng(seed)
    m = random_matrix(rng, max_dim=32)
    g = random_design(rng, m)
    ms = execute_graph(g, m)
    got = sorted(t for ns in ms for t in zip(*(a.tolist() for a in reconstruct(ns))))
    assert got == sorted(zip(m.row_idx.tolist(), m.col_idx.tolist(), m.values.tolist()))
    for ns in ms:
        for key in ns.keys():
            if key.endswith("_nz_offsets"):
                off = ns[key]
                assert off[0] == 0 and off[-1] == ns.n_entries
                assert np.all(np.diff(off) >= 0)
