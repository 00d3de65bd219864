"""Operators, their legality rules and the Operator Graph container.

A graph is a tree rooted at an ``INPUT`` node.  Every root-to-leaf path is
one complete design for one stripe of the matrix; branching happens only at
``ROW_DIV`` / ``COL_DIV`` (one child per stripe).  Legality is decided by
walking a path through :class:`PathState`, a small state machine shared by
:func:`legal_successors` and :func:`validate_graph` so the two can never
disagree.
"""

from __future__ import annotations

import copy
import enum
import json
from dataclasses import dataclass, field, replace

from .errors import ParseError, SpmvgenError, UnknownNode


class Stage(enum.IntEnum):
    INPUT = 0
    CONVERTING = 1
    MAPPING = 2
    IMPLEMENTING = 3


class OperatorKind(enum.Enum):
    INPUT = "INPUT"
    # converting
    ROW_DIV = "ROW_DIV"
    COL_DIV = "COL_DIV"
    SORT = "SORT"
    SORT_SUB = "SORT_SUB"
    BIN = "BIN"
    COMPRESS = "COMPRESS"
    # mapping
    BMTB_ROW_BLOCK = "BMTB_ROW_BLOCK"
    BMTB_NNZ_BLOCK = "BMTB_NNZ_BLOCK"
    BMW_ROW_BLOCK = "BMW_ROW_BLOCK"
    BMW_NNZ_BLOCK = "BMW_NNZ_BLOCK"
    BMT_ROW_BLOCK = "BMT_ROW_BLOCK"
    BMT_NNZ_BLOCK = "BMT_NNZ_BLOCK"
    BMT_PAD = "BMT_PAD"
    SORT_BMTB = "SORT_BMTB"
    # implementing
    SET_RESOURCES = "SET_RESOURCES"
    THREAD_TOTAL_RED = "THREAD_TOTAL_RED"
    THREAD_BITMAP_RED = "THREAD_BITMAP_RED"
    WARP_TOTAL_RED = "WARP_TOTAL_RED"
    WARP_BITMAP_RED = "WARP_BITMAP_RED"
    WARP_SEG_RED = "WARP_SEG_RED"
    SHMEM_TOTAL_RED = "SHMEM_TOTAL_RED"
    SHMEM_OFFSET_RED = "SHMEM_OFFSET_RED"
    GMEM_ATOM_RED = "GMEM_ATOM_RED"

    @property
    def stage(self) -> Stage:
        return _STAGE[self]

    @property
    def level(self):
        """Parallelism level ('bmtb', 'bmw', 'bmt') for blocking and reduction kinds."""
        return _LEVEL.get(self)

    def __repr__(self):
        return self.value


K = OperatorKind

# Names used in early drafts of the operator table.
KIND_ALIASES = {
    "WARP_SEG_ADD_RED": K.WARP_SEG_RED,
    "THREAD_BITMAP_RED_G": K.THREAD_BITMAP_RED,
    "SET_RESOURCE": K.SET_RESOURCES,
}

CONVERTING = (K.ROW_DIV, K.COL_DIV, K.SORT, K.SORT_SUB, K.BIN, K.COMPRESS)
MAPPING = (K.BMTB_ROW_BLOCK, K.BMTB_NNZ_BLOCK, K.BMW_ROW_BLOCK, K.BMW_NNZ_BLOCK,
           K.BMT_ROW_BLOCK, K.BMT_NNZ_BLOCK, K.BMT_PAD, K.SORT_BMTB)
IMPLEMENTING = (K.SET_RESOURCES, K.THREAD_TOTAL_RED, K.THREAD_BITMAP_RED,
                K.WARP_TOTAL_RED, K.WARP_BITMAP_RED, K.WARP_SEG_RED,
                K.SHMEM_TOTAL_RED, K.SHMEM_OFFSET_RED, K.GMEM_ATOM_RED)
OPERATORS = CONVERTING + MAPPING + IMPLEMENTING

_STAGE = {K.INPUT: Stage.INPUT}
_STAGE.update({k: Stage.CONVERTING for k in CONVERTING})
_STAGE.update({k: Stage.MAPPING for k in MAPPING})
_STAGE.update({k: Stage.IMPLEMENTING for k in IMPLEMENTING})

DIVISIONS = frozenset({K.ROW_DIV, K.COL_DIV})
REORDERS = frozenset({K.SORT, K.SORT_SUB, K.BIN})
BLOCKS = {
    "bmtb": (K.BMTB_ROW_BLOCK, K.BMTB_NNZ_BLOCK),
    "bmw": (K.BMW_ROW_BLOCK, K.BMW_NNZ_BLOCK),
    "bmt": (K.BMT_ROW_BLOCK, K.BMT_NNZ_BLOCK),
}
REDUCTIONS = {
    "bmt": (K.THREAD_TOTAL_RED, K.THREAD_BITMAP_RED),
    "bmw": (K.WARP_TOTAL_RED, K.WARP_BITMAP_RED, K.WARP_SEG_RED),
    "bmtb": (K.SHMEM_TOTAL_RED, K.SHMEM_OFFSET_RED),
}
LEVELS = ("bmtb", "bmw", "bmt")  # outermost first
_LEVEL = {}
for _lvl, _kinds in list(BLOCKS.items()) + list(REDUCTIONS.items()):
    for _k in _kinds:
        _LEVEL[_k] = _lvl

WARP_SIZE = 32
PAD_SCOPES = ("per_bmtb", "global")


# -- parameter schemas -------------------------------------------------------

def _int_list(v):
    return isinstance(v, list) and all(isinstance(i, int) and not isinstance(i, bool) for i in v)


def _pos_int(v, lo=1):
    return isinstance(v, int) and not isinstance(v, bool) and v >= lo


def _check_params(kind, params):
    """Return a list of problems with ``params`` for ``kind`` (empty if fine)."""
    schema = PARAM_SCHEMA.get(kind, {})
    problems = [f"unknown parameter {name!r}" for name in params if name not in schema]
    for name, check in schema.items():
        if name not in params:
            problems.append(f"missing parameter {name!r}")
        elif not check(params[name]):
            problems.append(f"bad value for {name!r}: {params[name]!r}")
    return problems


def _cuts_ok(v):
    return _int_list(v) and all(c >= 1 for c in v) and all(a < b for a, b in zip(v, v[1:]))


def _thresholds_ok(v):
    return _int_list(v) and len(v) >= 1 and all(a < b for a, b in zip(v, v[1:]))


PARAM_SCHEMA = {
    K.ROW_DIV: {"cuts": _cuts_ok},
    K.COL_DIV: {"cuts": _cuts_ok},
    K.SORT_SUB: {"group": lambda v: _pos_int(v, 2)},
    K.BIN: {"thresholds": _thresholds_ok},
    K.BMTB_ROW_BLOCK: {"rows_per_block": _pos_int},
    K.BMW_ROW_BLOCK: {"rows_per_block": _pos_int},
    K.BMT_ROW_BLOCK: {"rows_per_block": _pos_int},
    K.BMTB_NNZ_BLOCK: {"nnz_per_block": _pos_int},
    K.BMW_NNZ_BLOCK: {"nnz_per_block": _pos_int},
    K.BMT_NNZ_BLOCK: {"nnz_per_block": _pos_int},
    K.BMT_PAD: {"scope": lambda v: v in PAD_SCOPES},
    K.SET_RESOURCES: {"threads_per_block":
                      lambda v: _pos_int(v, 32) and v <= 1024 and v % WARP_SIZE == 0},
}


# -- path state machine ------------------------------------------------------

@dataclass(frozen=True)
class PathState:
    """Everything legality depends on, accumulated along one path."""

    compressed: bool = False
    divided: bool = False
    reordered: bool = False
    blocks: tuple = ()          # ((level, 'row'|'nnz'), ...) outermost first
    padded: bool = False
    bmtb_sorted: bool = False
    implementing: bool = False
    reduced: tuple = ()         # levels with a reduction, in order
    finished: bool = False

    def has(self, level):
        return any(lvl == level for lvl, _ in self.blocks)

    def blocking(self, level):
        for lvl, how in self.blocks:
            if lvl == level:
                return how
        return None

    @property
    def stage(self):
        if self.implementing or self.finished:
            return Stage.IMPLEMENTING
        if self.compressed:
            return Stage.MAPPING
        return Stage.CONVERTING

    def advance(self, kind: OperatorKind) -> "PathState":
        """Return the successor state or raise :class:`RuleViolation`."""
        if kind is K.INPUT:
            raise RuleViolation("structure", "INPUT may only be the root")
        if self.finished:
            raise RuleViolation("terminal", "nothing may follow GMEM_ATOM_RED")
        st = kind.stage
        if st is Stage.CONVERTING:
            if self.compressed:
                raise RuleViolation("stage order", f"{kind.value} after COMPRESS")
            if kind is K.COMPRESS:
                return replace(self, compressed=True)
            if kind in DIVISIONS:
                if self.divided:
                    raise RuleViolation("division", "at most one division per path")
                return replace(self, divided=True)
            if self.reordered:
                raise RuleViolation("reorder", "at most one row reordering per path")
            return replace(self, reordered=True)

        if not self.compressed:
            raise RuleViolation("compress", f"{kind.value} before COMPRESS")

        if st is Stage.MAPPING:
            if self.implementing:
                raise RuleViolation("stage order", f"{kind.value} after implementing operators")
            lvl = kind.level
            if lvl is not None:
                finer = LEVELS[LEVELS.index(lvl):]
                if any(self.has(f) for f in finer):
                    raise RuleViolation(
                        "split order", f"{kind.value} after a same or finer level block")
                how = "row" if kind.value.endswith("ROW_BLOCK") else "nnz"
                return replace(self, blocks=self.blocks + ((lvl, how),))
            if kind is K.BMT_PAD:
                if not self.has("bmt"):
                    raise RuleViolation("pad", "BMT_PAD requires a BMT block")
                if self.padded:
                    raise RuleViolation("pad", "BMT_PAD applied twice")
                return replace(self, padded=True)
            # SORT_BMTB
            if self.blocking("bmtb") != "row":
                raise RuleViolation("sort_bmtb", "SORT_BMTB requires BMTB_ROW_BLOCK")
            if self.has("bmw") or self.has("bmt"):
                raise RuleViolation("sort_bmtb", "SORT_BMTB after finer blocks")
            if self.bmtb_sorted:
                raise RuleViolation("sort_bmtb", "SORT_BMTB applied twice")
            return replace(self, bmtb_sorted=True)

        # implementing
        if kind is K.GMEM_ATOM_RED:
            return replace(self, implementing=True, finished=True)
        if kind is K.SET_RESOURCES:
            if self.implementing:
                raise RuleViolation("resources", "SET_RESOURCES must open the implementing stage")
            return replace(self, implementing=True)
        lvl = kind.level
        if not self.has(lvl):
            raise RuleViolation("level mismatch", f"{kind.value} requires a {lvl.upper()} block")
        if lvl in self.reduced:
            raise RuleViolation("level mismatch", f"second {lvl.upper()} reduction")
        order = ("bmt", "bmw", "bmtb")
        if any(order.index(r) > order.index(lvl) for r in self.reduced):
            raise RuleViolation("level mismatch", f"{kind.value} after a coarser reduction")
        return replace(self, implementing=True, reduced=self.reduced + (lvl,))


class RuleViolation(SpmvgenError):
    def __init__(self, rule, message):
        self.rule = rule
        super().__init__(f"{rule}: {message}")


def path_state(kinds) -> PathState:
    st = PathState()
    for k in kinds:
        st = st.advance(k)
    return st


# -- graph -------------------------------------------------------------------

@dataclass
class OperatorNode:
    id: int
    kind: OperatorKind
    params: dict = field(default_factory=dict)


class OperatorGraph:
    """Rooted operator tree; node 0 is always the ``INPUT`` node."""

    def __init__(self):
        self.nodes = {0: OperatorNode(0, K.INPUT, {})}
        self.children = {0: []}
        self.parent = {0: None}
        self.root = 0
        self._next = 1

    # construction -----------------------------------------------------------
    def add(self, parent, kind, params=None) -> int:
        if parent not in self.nodes:
            raise UnknownNode(parent)
        kind = OperatorKind(kind) if not isinstance(kind, OperatorKind) else kind
        nid = self._next
        self._next += 1
        self.nodes[nid] = OperatorNode(nid, kind, dict(params or {}))
        self.children[nid] = []
        self.children[parent].append(nid)
        self.parent[nid] = parent
        return nid

    @classmethod
    def chain(cls, *ops) -> "OperatorGraph":
        """Build a single-path graph from ``kind`` or ``(kind, params)`` items."""
        g = cls()
        leaf = g.root
        for op in ops:
            kind, params = (op, {}) if not isinstance(op, tuple) else op
            leaf = g.add(leaf, kind, params)
        return g

    def copy(self) -> "OperatorGraph":
        return copy.deepcopy(self)

    def remove_subtree(self, nid):
        if nid == self.root:
            raise SpmvgenError("cannot remove the input node")
        for c in list(self.children[nid]):
            self.remove_subtree(c)
        self.children[self.parent[nid]].remove(nid)
        del self.nodes[nid], self.children[nid], self.parent[nid]

    # queries ------------------------------------------------------------------
    def leaves(self):
        return [n for n in self.preorder() if not self.children[n]]

    def preorder(self):
        out, stack = [], [self.root]
        while stack:
            n = stack.pop()
            out.append(n)
            stack.extend(reversed(self.children[n]))
        return out

    def path_to(self, nid):
        """Node ids from the root (inclusive) to ``nid`` (inclusive)."""
        if nid not in self.nodes:
            raise UnknownNode(nid)
        path = []
        while nid is not None:
            path.append(nid)
            nid = self.parent[nid]
        return path[::-1]

    def kinds_to(self, nid):
        return [self.nodes[n].kind for n in self.path_to(nid)[1:]]

    def paths(self):
        return [self.path_to(leaf) for leaf in self.leaves()]

    def kinds(self):
        return {n.kind for n in self.nodes.values()}

    def __len__(self):
        return len(self.nodes) - 1

    def __eq__(self, other):
        if not isinstance(other, OperatorGraph):
            return NotImplemented
        return serialize_graph(self) == serialize_graph(other)

    def __repr__(self):
        return f"OperatorGraph({describe(self)})"


def describe(g: OperatorGraph, nid=None) -> str:
    """Compact one-line rendering, e.g. ``SORT>COMPRESS>BMT_ROW_BLOCK(1)>...``."""
    nid = g.root if nid is None else nid
    node = g.nodes[nid]
    if node.kind is K.INPUT:
        label = ""
    else:
        vals = [str(v) for _, v in sorted(node.params.items())]
        label = node.kind.value + (f"({','.join(vals)})" if vals else "")
    kids = g.children[nid]
    if not kids:
        return label
    rest = [describe(g, c) for c in kids]
    tail = rest[0] if len(rest) == 1 else "[" + " | ".join(rest) + "]"
    return f"{label}>{tail}" if label else tail


# -- legality ----------------------------------------------------------------

def _banned(ban, kinds):
    if ban is None:
        return frozenset()
    if hasattr(ban, "banned_for"):
        return ban.banned_for(kinds)
    return frozenset(ban)


def legal_successors(g: OperatorGraph, leaf, ban=None) -> set:
    """Kinds that may be appended after ``leaf`` without breaking any rule."""
    if leaf not in g.nodes:
        raise UnknownNode(leaf)
    node = g.nodes[leaf]
    if g.children[leaf] and node.kind not in DIVISIONS:
        raise SpmvgenError(f"node {leaf} is not a leaf")
    kinds = g.kinds_to(leaf)
    st = path_state(kinds)
    banned = _banned(ban, kinds)
    out = set()
    for k in OPERATORS:
        if k in banned:
            continue
        try:
            st.advance(k)
        except RuleViolation:
            continue
        out.add(k)
    return out


@dataclass(frozen=True)
class Violation:
    node: int
    rule: str
    message: str

    def __str__(self):
        return f"node {self.node}: {self.rule}: {self.message}"


def validate_graph(g: OperatorGraph, complete=True, require_params=True):
    """Return a list of :class:`Violation` (empty means valid).

    ``complete=False`` accepts prefixes (paths need not end in GMEM_ATOM_RED);
    ``require_params=False`` accepts bare structures without parameters.
    """
    out = []
    if g.nodes[g.root].kind is not K.INPUT:
        out.append(Violation(g.root, "structure", "root must be INPUT"))
    for nid in g.preorder():
        node = g.nodes[nid]
        kids = g.children[nid]
        if nid != g.root and node.kind is K.INPUT:
            out.append(Violation(nid, "structure", "INPUT may only be the root"))
        if node.kind in DIVISIONS:
            cuts = node.params.get("cuts")
            if kids and cuts is not None and _int_list(cuts) and len(kids) != len(cuts) + 1:
                out.append(Violation(nid, "branching",
                                     f"{len(cuts) + 1} stripes but {len(kids)} children"))
            if kids and len(kids) < 2:
                out.append(Violation(nid, "branching", "a division needs at least two children"))
        elif len(kids) > 1:
            out.append(Violation(nid, "branching", f"{node.kind.value} cannot branch"))
        if node.kind is not K.INPUT and (require_params or node.params):
            for p in _check_params(node.kind, node.params):
                if require_params or not p.startswith("missing"):
                    out.append(Violation(nid, "params", p))

    for path in g.paths():
        st = PathState()
        for nid in path[1:]:
            try:
                st = st.advance(g.nodes[nid].kind)
            except RuleViolation as exc:
                out.append(Violation(nid, exc.rule, str(exc).split(": ", 1)[1]))
                break
        else:
            if complete and not st.finished:
                last = path[-1]
                if g.nodes[last].kind in DIVISIONS and not g.children[last]:
                    msg = "division has no stripe children"
                else:
                    msg = "path does not end in GMEM_ATOM_RED"
                out.append(Violation(last, "incomplete", msg))
    return out


# -- serialization -----------------------------------------------------------

def canonical(g: OperatorGraph) -> OperatorGraph:
    """Copy of ``g`` with ids renumbered in preorder."""
    remap = {old: new for new, old in enumerate(g.preorder())}
    h = OperatorGraph()
    for old in g.preorder()[1:]:
        n = g.nodes[old]
        nid = h.add(remap[g.parent[old]], n.kind, copy.deepcopy(n.params))
        assert nid == remap[old]
    return h


def graph_to_dict(g: OperatorGraph) -> dict:
    c = canonical(g)
    nodes = [{"id": n, "kind": c.nodes[n].kind.value, "params": c.nodes[n].params}
             for n in c.preorder()]
    edges = [[c.parent[n], n] for n in c.preorder()[1:]]
    return {"nodes": nodes, "edges": edges}


def serialize_graph(g: OperatorGraph, indent=None) -> str:
    return json.dumps(graph_to_dict(g), sort_keys=True, indent=indent,
                      separators=(",", ":") if indent is None else None)


def _parse_kind(name, where):
    if name in KIND_ALIASES:
        return KIND_ALIASES[name]
    try:
        return OperatorKind(name)
    except ValueError:
        raise ParseError(f"unknown operator kind {name!r}", where) from None


def graph_from_dict(obj) -> OperatorGraph:
    if not isinstance(obj, dict) or "nodes" not in obj:
        raise ParseError("expected an object with 'nodes' and 'edges'", "$")
    raw_nodes = obj["nodes"]
    edges = obj.get("edges", [])
    if not isinstance(raw_nodes, list) or not isinstance(edges, list):
        raise ParseError("'nodes' and 'edges' must be lists", "$")
    info = {}
    for i, rn in enumerate(raw_nodes):
        where = f"nodes[{i}]"
        if not isinstance(rn, dict) or "id" not in rn or "kind" not in rn:
            raise ParseError("node needs 'id' and 'kind'", where)
        if rn["id"] in info:
            raise ParseError(f"duplicate node id {rn['id']!r}", where)
        params = rn.get("params", {})
        if not isinstance(params, dict):
            raise ParseError("params must be an object", where + ".params")
        info[rn["id"]] = (_parse_kind(rn["kind"], where + ".kind"), params)
    kids = {nid: [] for nid in info}
    has_parent = set()
    for j, e in enumerate(edges):
        where = f"edges[{j}]"
        if not (isinstance(e, list) and len(e) == 2):
            raise ParseError("edge must be [parent, child]", where)
        p, c = e
        if p not in info or c not in info:
            raise ParseError(f"edge references unknown node {p if p not in info else c!r}", where)
        if c in has_parent:
            raise ParseError(f"node {c!r} has two parents", where)
        has_parent.add(c)
        kids[p].append(c)
    roots = [nid for nid in info if nid not in has_parent]
    if len(roots) != 1:
        raise ParseError(f"expected exactly one root, found {len(roots)}", "edges")
    root = roots[0]
    if info[root][0] is not K.INPUT:
        raise ParseError("root node must have kind INPUT", "nodes")

    g = OperatorGraph()
    seen = {root}
    stack = [(root, 0)]
    while stack:
        old, new = stack.pop()
        for c in kids[old]:
            if c in seen:
                raise ParseError(f"cycle through node {c!r}", "edges")
            seen.add(c)
            kind, params = info[c]
            stack.append((c, g.add(new, kind, copy.deepcopy(params))))
    if len(seen) != len(info):
        raise ParseError("graph is not connected", "edges")
    return canonical(g)


def parse_graph(text) -> OperatorGraph:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, f"line {exc.lineno} column {exc.colno}") from None
    return graph_from_dict(obj)
