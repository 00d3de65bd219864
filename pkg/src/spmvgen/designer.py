"""Execute an operator graph against a matrix, building the metadata set.

Each root-to-leaf path owns one :class:`Namespace`.  A namespace keeps its
nonzeros in *current* row order (``row_indices`` are local row ids after
every permutation so far) and maps local rows back to matrix rows through
``origin_rows``.  Block offsets are global positions into the entry arrays;
child blocks never straddle a parent boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BadThresholds,
    DesignError,
    InfeasibleDesign,
    InvalidGraph,
    SizeZero,
)
from .matio import CooMatrix
from .opgraph import (
    DIVISIONS,
    LEVELS,
    PAD_SCOPES,
    OperatorGraph,
    OperatorKind,
    validate_graph,
)

K = OperatorKind


@dataclass
class Namespace:
    """Metadata for one stripe of the matrix."""

    id: int
    n_rows: int
    n_cols: int
    data: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    # path bookkeeping (not metadata)
    origin: np.ndarray = None        # local row -> matrix row, always maintained
    compressed: bool = False
    levels: dict = field(default_factory=dict)   # level -> ('row'|'nnz', size, node)
    impl: dict = field(default_factory=dict)     # level|'gmem' -> reduction kind
    padded: bool = False
    pad_scope: str = None
    resources: int = None
    nodes: list = field(default_factory=list)    # node ids applied, in order

    def __getitem__(self, key):
        return self.data[key]

    def __contains__(self, key):
        return key in self.data

    def keys(self):
        return self.data.keys()

    def put(self, key, value, node):
        if isinstance(value, np.ndarray):
            value.setflags(write=False)
        self.data[key] = value
        self.provenance[key] = node

    @property
    def n_entries(self):
        return int(self.data["values"].shape[0])

    @property
    def rows(self):
        return self.data["row_indices"]

    def real_nnz(self):
        if "pad_flags" in self.data:
            return int(self.n_entries - self.data["pad_flags"].sum())
        return self.n_entries

    def offsets(self, level):
        """Entry offsets of blocks at ``level`` (length n_blocks + 1)."""
        return self.data[f"{level}_nz_offsets"]

    def n_blocks(self, level):
        return len(self.offsets(level)) - 1

    def first_rows(self, level):
        off = self.offsets(level)
        return self.rows[off[:-1]]

    def last_rows(self, level):
        off = self.offsets(level)
        return self.rows[off[1:] - 1]

    def parent_level(self, level):
        """Closest coarser level present, or None."""
        idx = LEVELS.index(level)
        for lvl in reversed(LEVELS[:idx]):
            if lvl in self.levels:
                return lvl
        return None

    def finest_level(self):
        present = [lvl for lvl in LEVELS if lvl in self.levels]
        return present[-1] if present else None

    def summary(self, width=8):
        out = []
        for k, v in self.data.items():
            if isinstance(v, np.ndarray):
                head = ", ".join(f"{t:g}" if isinstance(t, float) else str(t)
                                 for t in v[:width].tolist())
                more = ", ..." if len(v) > width else ""
                out.append(f"{k}: len={len(v)} [{head}{more}]")
            else:
                out.append(f"{k}: {v}")
        return out


class MetadataSet:
    """Namespaces keyed by sub-matrix id, in leaf order of the graph."""

    def __init__(self, matrix: CooMatrix, namespaces):
        self.matrix = matrix
        self.namespaces = {ns.id: ns for ns in namespaces}

    def __getitem__(self, nsid) -> Namespace:
        return self.namespaces[nsid]

    def __iter__(self):
        return iter(self.namespaces.values())

    def __len__(self):
        return len(self.namespaces)

    def dump(self, width=8):
        lines = []
        for ns in self:
            lines.append(f"[namespace {ns.id}] rows={ns.n_rows} entries={ns.n_entries}")
            lines += ["  " + s for s in ns.summary(width)]
        return "\n".join(lines)


# -- helpers -----------------------------------------------------------------

def _runs(values):
    """Start positions of runs of equal consecutive values."""
    if len(values) == 0:
        return np.zeros(0, dtype=np.int64)
    change = np.flatnonzero(values[1:] != values[:-1]) + 1
    return np.concatenate([[0], change]).astype(np.int64)


def _lengths(ns):
    return np.bincount(ns.rows, minlength=ns.n_rows) if ns.n_rows else np.zeros(0, np.int64)


def _permute_rows(ns, perm, node):
    """Renumber rows so new row r is old row ``perm[r]``; reorders entries."""
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    new_rows = inv[ns.rows]
    order = np.lexsort((np.arange(len(new_rows)), new_rows))
    for key in ("col_indices", "values", "pad_flags"):
        if key in ns.data:
            ns.put(key, ns.data[key][order], ns.provenance[key])
    ns.put("row_indices", new_rows[order], ns.provenance["row_indices"])
    ns.origin = ns.origin[perm]
    ns.put("origin_rows", ns.origin.copy(), node)
    if "row_lengths" in ns.data:
        ns.put("row_lengths", _lengths(ns), node)


def _stable_desc(lengths):
    return np.argsort(-lengths, kind="stable")


# -- converting operators ----------------------------------------------------

def op_row_div(ns, cuts, node, next_id):
    cuts = list(cuts)
    if any(c < 1 or c > ns.n_rows - 1 for c in cuts) or cuts != sorted(set(cuts)):
        raise DesignError(f"ROW_DIV cuts {cuts} invalid for {ns.n_rows} rows", node)
    bounds = [0] + cuts + [ns.n_rows]
    out = []
    for lo, hi in zip(bounds, bounds[1:]):
        sel = (ns.rows >= lo) & (ns.rows < hi)
        out.append(_substripe(ns, sel, np.arange(lo, hi), node, next_id + len(out)))
    return out


def op_col_div(ns, cuts, node, next_id):
    cuts = list(cuts)
    if any(c < 1 or c > ns.n_cols - 1 for c in cuts) or cuts != sorted(set(cuts)):
        raise DesignError(f"COL_DIV cuts {cuts} invalid for {ns.n_cols} columns", node)
    bounds = [0] + cuts + [ns.n_cols]
    cols = ns["col_indices"]
    out = []
    for lo, hi in zip(bounds, bounds[1:]):
        sel = (cols >= lo) & (cols < hi)
        if not sel.any():
            raise InfeasibleDesign(f"COL_DIV stripe [{lo}, {hi}) has no nonzeros", node)
        kept = np.unique(ns.rows[sel])
        out.append(_substripe(ns, sel, kept, node, next_id + len(out)))
    return out


def _substripe(ns, sel, kept_rows, node, new_id):
    """New namespace holding entries ``sel`` with rows ``kept_rows`` re-based to 0."""
    remap = np.full(ns.n_rows, -1, dtype=np.int64)
    remap[kept_rows] = np.arange(len(kept_rows))
    sub = Namespace(new_id, len(kept_rows), ns.n_cols)
    sub.nodes = list(ns.nodes)
    for key in ("col_indices", "values"):
        sub.put(key, ns.data[key][sel].copy(), ns.provenance[key])
    sub.put("row_indices", remap[ns.rows[sel]], node)
    sub.origin = ns.origin[kept_rows]
    sub.put("origin_rows", sub.origin.copy(), node)
    if "row_lengths" in ns.data:
        sub.put("row_lengths", _lengths(sub), node)
    return sub


def op_sort_family(ns, kind, params, node):
    lengths = _lengths(ns)
    if kind is K.SORT:
        perm = _stable_desc(lengths)
    elif kind is K.SORT_SUB:
        g = params["group"]
        if g < 2:
            raise DesignError(f"SORT_SUB group must be >= 2, got {g}", node)
        perm = np.concatenate([lo + _stable_desc(lengths[lo:lo + g])
                               for lo in range(0, ns.n_rows, g)]) if ns.n_rows else lengths
    elif kind is K.BIN:
        th = np.asarray(params["thresholds"], dtype=np.int64)
        if len(th) == 0 or np.any(np.diff(th) <= 0):
            raise BadThresholds(f"BIN thresholds must be strictly ascending, got {th.tolist()}",
                                node)
        # bin i holds rows with thresholds[i-1] < len <= thresholds[i]
        bins = np.searchsorted(th, lengths, side="left")
        perm = np.argsort(bins, kind="stable")
        counts = np.bincount(bins, minlength=len(th) + 1)
        ns.put("bin_offsets", np.concatenate([[0], np.cumsum(counts)]).astype(np.int64), node)
    else:
        raise DesignError(f"{kind.value} is not a sort operator", node)
    _permute_rows(ns, perm.astype(np.int64), node)
    ns.put("row_lengths", _lengths(ns), node)


def op_compress(ns, node):
    order = np.lexsort((ns["col_indices"], ns.rows))
    if not np.array_equal(order, np.arange(len(order))):
        for key in ("row_indices", "col_indices", "values"):
            ns.put(key, ns.data[key][order], ns.provenance[key])
    ns.put("row_lengths", _lengths(ns), node)
    ns.compressed = True


# -- mapping operators -------------------------------------------------------

def op_block_family(ns, kind, params, node):
    level = kind.level
    how = "row" if "ROW" in kind.value else "nnz"
    size = params["rows_per_block" if how == "row" else "nnz_per_block"]
    if size < 1:
        raise SizeZero(f"{kind.value} block size must be >= 1", node)
    if not ns.compressed:
        raise DesignError(f"{kind.value} before COMPRESS", node)
    parent = ns.parent_level(level)
    if parent is None:
        bounds = np.array([0, ns.n_entries], dtype=np.int64)
    else:
        bounds = np.asarray(ns.offsets(parent), dtype=np.int64)

    rows = ns.rows
    starts, per_parent = [], []
    for lo, hi in zip(bounds[:-1].tolist(), bounds[1:].tolist()):
        if hi <= lo:
            per_parent.append(0)
            continue
        if how == "row":
            row_starts = lo + _runs(rows[lo:hi])
            s = row_starts[::size]
        else:
            s = np.arange(lo, hi, size, dtype=np.int64)
        starts.append(s)
        per_parent.append(len(s))
    starts = np.concatenate(starts) if starts else np.zeros(0, np.int64)
    nz_off = np.concatenate([starts, [ns.n_entries]]).astype(np.int64)
    ns.levels[level] = (how, size, node)
    ns.put(f"{level}_nz_offsets", nz_off, node)
    first = rows[starts] if len(starts) else np.zeros(0, np.int64)
    if how == "row":
        ns.put(f"{level}_row_offsets",
               np.concatenate([first, [ns.n_rows]]).astype(np.int64), node)
    else:
        ns.put(f"first_row_of_{level}", first.astype(np.int64), node)
    # child counts for every coarser level present
    for coarse in LEVELS[:LEVELS.index(level)]:
        if coarse not in ns.levels:
            continue
        c_off = ns.offsets(coarse)
        child = np.searchsorted(nz_off, c_off, side="left")
        ns.put(f"{coarse}_{level}_offsets", child.astype(np.int64), node)


def op_bmt_pad(ns, scope, node):
    if "bmt" not in ns.levels:
        raise DesignError("BMT_PAD requires BMT blocks", node)
    if scope not in PAD_SCOPES:
        raise DesignError(f"unknown pad scope {scope!r}", node)
    off = ns.offsets("bmt")
    sizes = np.diff(off)
    n_bmt = len(sizes)
    if "bmtb" in ns.levels and scope == "per_bmtb":
        grp = ns["bmtb_bmt_offsets"]
        target_of_group = np.array([sizes[a:b].max() if b > a else 0
                                    for a, b in zip(grp[:-1], grp[1:])], dtype=np.int64)
        owner = np.repeat(np.arange(len(target_of_group)), np.diff(grp))
        target = target_of_group[owner]
    else:
        gmax = int(sizes.max()) if n_bmt else 0
        target = np.full(n_bmt, gmax, dtype=np.int64)
        n_groups = ns.n_blocks("bmtb") if "bmtb" in ns.levels else 1
        target_of_group = np.full(n_groups, gmax, dtype=np.int64)
    pads = target - sizes
    shift = np.concatenate([[0], np.cumsum(pads)])   # pads inserted before BMT t

    total = int(pads.sum())
    E = ns.n_entries
    bmt_of = np.repeat(np.arange(n_bmt), sizes)
    new_pos = np.arange(E) + shift[bmt_of]
    new_E = E + total
    last = off[1:] - 1
    pad_owner = np.repeat(np.arange(n_bmt), pads)
    pad_rank = np.arange(total) - np.repeat(shift[:-1], pads)
    pad_pos = off[1:][pad_owner] + shift[pad_owner] + pad_rank

    def spread(real, pad_fill, dtype):
        out = np.empty(new_E, dtype=dtype)
        out[new_pos] = real
        out[pad_pos] = pad_fill
        return out

    flags_old = ns["pad_flags"] if "pad_flags" in ns else np.zeros(E, np.int8)
    ns.put("row_indices", spread(ns.rows, ns.rows[last][pad_owner], np.int64),
           ns.provenance["row_indices"])
    ns.put("col_indices", spread(ns["col_indices"], ns["col_indices"][last][pad_owner],
                                 np.int64), node)
    ns.put("values", spread(ns["values"], 0.0, ns["values"].dtype), node)
    ns.put("pad_flags", spread(flags_old, 1, np.int8), node)
    # every nz offset at every level sits on a BMT boundary
    for level in ns.levels:
        key = f"{level}_nz_offsets"
        o = ns[key]
        idx = np.searchsorted(off, o, side="left")
        ns.put(key, (o + shift[idx]).astype(np.int64), ns.provenance[key])
    ns.put("bmt_sizes_of_bmtb", target_of_group.astype(np.int64), node)
    ns.padded = True
    ns.pad_scope = scope


def op_sort_bmtb(ns, node):
    if ns.levels.get("bmtb", (None,))[0] != "row":
        raise DesignError("SORT_BMTB requires BMTB_ROW_BLOCK", node)
    if "bmw" in ns.levels or "bmt" in ns.levels:
        raise DesignError("SORT_BMTB must precede finer blocks", node)
    ro = ns["bmtb_row_offsets"]
    lengths = _lengths(ns)
    perm = np.concatenate([lo + _stable_desc(lengths[lo:hi])
                           for lo, hi in zip(ro[:-1].tolist(), ro[1:].tolist())])
    _permute_rows(ns, perm.astype(np.int64), node)
    ns.put("row_lengths", _lengths(ns), node)


# -- reduction layout (rows only) --------------------------------------------

REDUCTION_ORDER = ("bmt", "bmw", "bmtb")


@dataclass
class PartialLayout:
    """Rows of the partial results leaving a reduction stage.

    ``unit[level]`` is the id of the enclosing block at each coarser level
    for every partial, ``entry`` the first entry the partial covers.
    """

    rows: np.ndarray
    entry: np.ndarray
    unit: dict


def _unit_ids(ns, positions):
    return {lvl: np.searchsorted(ns.offsets(lvl), positions, side="right") - 1
            for lvl in ns.levels}


def partial_layout(ns, upto=None) -> PartialLayout:
    """Partials produced after the reductions of every level up to ``upto``."""
    E = ns.n_entries
    entry = np.arange(E, dtype=np.int64)
    rows = ns.rows.astype(np.int64)
    units = _unit_ids(ns, entry)
    for level in REDUCTION_ORDER:
        kind = ns.impl.get(level)
        if kind is not None:
            unit = units[level]
            if kind.value.endswith("TOTAL_RED"):
                keep = _runs(unit)
            else:
                keep = _runs(unit * (ns.n_rows + 1) + rows)
            entry, rows = entry[keep], rows[keep]
            units = {lvl: u[keep] for lvl, u in units.items()}
        if level == upto:
            break
    return PartialLayout(rows, entry, units)


def _require_single_row(ns, level, kind, node):
    if ns.n_blocks(level) and np.any(ns.first_rows(level) != ns.last_rows(level)):
        bad = int(np.flatnonzero(ns.first_rows(level) != ns.last_rows(level))[0])
        raise InfeasibleDesign(
            f"{kind.value} needs single-row {level.upper()} blocks; block {bad} spans rows", node)


def record_impl_choice(ns, kind, params, node):
    if kind is K.SET_RESOURCES:
        ns.resources = params["threads_per_block"]
        ns.put("threads_per_block", int(ns.resources), node)
        return
    if kind is K.GMEM_ATOM_RED:
        ns.impl["gmem"] = kind
        ns.put("gmem_atom_red", 1, node)
        return
    level = kind.level
    if level not in ns.levels:
        raise DesignError(f"{kind.value} requires {level.upper()} blocks", node)
    if kind.value.endswith("TOTAL_RED"):
        _require_single_row(ns, level, kind, node)
    ns.impl[level] = kind
    ns.put(kind.value.lower(), 1, node)

    if kind is K.THREAD_BITMAP_RED:
        ns.put("row_bitmap", _head_flags(ns.rows, ns.offsets("bmt")[:-1], len(ns.rows)), node)
    elif kind is K.WARP_BITMAP_RED:
        # per entry so the flag of a partial is read at its head entry
        ns.put("warp_red_bitmap",
               _head_flags(ns.rows, ns.offsets("bmw")[:-1], len(ns.rows)), node)
    elif kind is K.SHMEM_OFFSET_RED:
        lay = partial_layout(ns, "bmw")
        starts = np.searchsorted(lay.entry, ns.offsets("bmtb"), side="left")
        pieces, slice_starts, pos = [], [], 0
        for a, b in zip(starts[:-1].tolist(), starts[1:].tolist()):
            heads = _runs(lay.rows[a:b])
            local = np.concatenate([heads, [b - a]]).astype(np.int64)
            pieces.append(local)
            slice_starts.append(pos)
            pos += len(local)
        ns.put("reduce_row_offsets",
               np.concatenate(pieces) if pieces else np.zeros(0, np.int64), node)
        if ns.levels["bmtb"][0] == "nnz":
            ns.put("reduce_slice_starts", np.asarray(slice_starts, dtype=np.int64), node)


def _head_flags(rows, unit_starts, n):
    """1 where a partial starts a new row inside its unit (unit heads are 0)."""
    flags = np.zeros(n, dtype=np.uint8)
    if n > 1:
        flags[1:] = rows[1:] != rows[:-1]
    flags[np.asarray(unit_starts, dtype=np.int64)[np.asarray(unit_starts) < n]] = 0
    return flags


# -- driver ------------------------------------------------------------------

def _root_namespace(m: CooMatrix) -> Namespace:
    ns = Namespace(0, m.n_rows, m.n_cols)
    ns.put("row_indices", m.row_idx.copy(), 0)
    ns.put("col_indices", m.col_idx.copy(), 0)
    ns.put("values", m.values.copy(), 0)
    ns.origin = np.arange(m.n_rows, dtype=np.int64)
    return ns


def apply_operator(ns, node_obj, next_id=0):
    """Apply one operator; returns the namespaces that continue from it."""
    kind, params, nid = node_obj.kind, node_obj.params, node_obj.id
    ns.nodes.append(nid)
    try:
        if kind is K.INPUT:
            return [ns]
        if kind is K.ROW_DIV:
            return op_row_div(ns, params["cuts"], nid, next_id)
        if kind is K.COL_DIV:
            return op_col_div(ns, params["cuts"], nid, next_id)
        if kind in (K.SORT, K.SORT_SUB, K.BIN):
            op_sort_family(ns, kind, params, nid)
        elif kind is K.COMPRESS:
            op_compress(ns, nid)
        elif kind.level is not None and kind.stage.name == "MAPPING":
            op_block_family(ns, kind, params, nid)
        elif kind is K.BMT_PAD:
            op_bmt_pad(ns, params["scope"], nid)
        elif kind is K.SORT_BMTB:
            op_sort_bmtb(ns, nid)
        else:
            record_impl_choice(ns, kind, params, nid)
    except DesignError:
        raise
    except KeyError as exc:
        raise DesignError(f"{kind.value}: missing parameter or metadata {exc}", nid) from None
    return [ns]


def execute_graph(g: OperatorGraph, m: CooMatrix, validate=True) -> MetadataSet:
    """Run every path of ``g`` (complete or prefix) over ``m``."""
    if validate:
        bad = validate_graph(g, complete=False)
        if bad:
            raise InvalidGraph(bad)
    done = []

    def walk(nid, ns):
        node = g.nodes[nid]
        out = apply_operator(ns, node, next_id=0)
        kids = g.children[nid]
        if node.kind in DIVISIONS:
            if kids and len(kids) != len(out):
                raise DesignError(f"{len(out)} stripes but {len(kids)} children", nid)
            if not kids:
                done.extend(out)
                return
            for child, sub in zip(kids, out):
                walk(child, sub)
            return
        if not kids:
            done.append(out[0])
            return
        walk(kids[0], out[0])

    walk(g.root, _root_namespace(m))
    for i, ns in enumerate(done):
        ns.id = i
    return MetadataSet(m, done)


def reconstruct(ns: Namespace):
    """(matrix_row, col, value) triples of real entries, sorted row-major."""
    keep = np.ones(ns.n_entries, bool) if "pad_flags" not in ns else ns["pad_flags"] == 0
    rows = ns.origin[ns.rows[keep]]
    cols = ns["col_indices"][keep]
    vals = ns["values"][keep]
    order = np.lexsort((cols, rows))
    return rows[order], cols[order], vals[order]


def row_lengths_at(g: OperatorGraph, nid, m: CooMatrix):
    """Current row lengths seen by node ``nid`` (executes the converting prefix)."""
    path = g.path_to(nid)[:-1]
    ns = _root_namespace(m)
    for p in path:
        node = g.nodes[p]
        if node.kind in DIVISIONS:
            raise DesignError("row lengths below a division depend on the stripe", nid)
        apply_operator(ns, node)
    return _lengths(ns)
