"""Design-space search: random structures, coarse grids, surrogate refinement.

One *structure* is an operator graph without parameters.  Each structure is
measured on a coarse parameter grid; a surrogate fitted to those
measurements nominates a few fine-grid points that are measured as well.
Structures are proposed by a simulated-annealing walk (fresh random graphs
or subtree re-growth of the current one) that stops once the typical
shortfall of new structures makes acceptance improbable, when a structure
cap is reached, or when the wall-clock budget runs out.
"""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import math
import time
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .compress import apply_compression
from .designer import execute_graph, row_lengths_at
from .errors import (
    DeadEnd,
    DesignError,
    InvalidGraph,
    ExecutionError,
    MissingKey,
    MissingResource,
    NoAdapterRule,
    NoFeasibleDesign,
)
from .executor import benchmark, execute_plan
from .formatgen import build_format, required_keys
from .kernelgen import build_plan, optimize_plan
from .matio import CooMatrix, MatrixStats, compute_stats, spmv_oracle
from .opgraph import (
    DIVISIONS,
    PAD_SCOPES,
    WARP_SIZE,
    OperatorGraph,
    OperatorKind,
    RuleViolation,
    canonical,
    legal_successors,
    path_state,
    serialize_graph,
)
from .surrogate import encode, fit_or_fallback

K = OperatorKind

DEFAULT_GRIDS = {
    "threads_per_block": [64, 128, 256, 512],
    "rows_per_block": [1, 2, 4, 8, 32],
    "nnz_per_block": [2, 4, 8, 16],
    "sort_sub_group": [32, 128, 512],
    "degree": [0.5, 1.0, 2.0],
    "pad_scope": list(PAD_SCOPES),
    "bin_base": [2, 4],
}
# nnz grids are per thread; warps and blocks cover proportionally more
NNZ_SCALE = {"bmt": 1, "bmw": WARP_SIZE, "bmtb": 256}
TOTAL_OF_LEVEL = {"bmt": K.THREAD_TOTAL_RED, "bmw": K.WARP_TOTAL_RED, "bmtb": K.SHMEM_TOTAL_RED}
REGULAR_BANS = frozenset({K.WARP_BITMAP_RED, K.WARP_SEG_RED, K.THREAD_BITMAP_RED, K.BIN})


@dataclass
class AnnealConfig:
    t0: float = 0.3
    alpha: float = 0.9
    min_accept: float = 1e-3


@dataclass
class SearchConfig:
    wall_clock_budget: float = 600.0
    coarse_grids: dict = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_GRIDS.items()})
    fine_refine_factor: int = 2
    fine_top_k: int = 3
    sa: AnnealConfig = field(default_factory=AnnealConfig)
    seed: int = 0
    bench_reps: int = 3
    bench_warmup: int = 1
    clock: str = "model"
    max_structures: int = 64
    max_grid_points: int = 48
    patch_budget: int = 8
    user_bans: list = field(default_factory=list)
    prune: bool = True
    seed_csr: bool = True
    p_fresh: float = 0.3
    branch_counts: tuple = (2, 3)
    shortfall_window: int = 8
    surrogate: str = "forest"
    precision: str = "f64"
    workers: int = 1

    def __post_init__(self):
        if isinstance(self.sa, dict):
            self.sa = AnnealConfig(**self.sa)
        if not 0 < self.sa.alpha < 1:
            raise ValueError("sa.alpha must lie in (0, 1)")
        if self.wall_clock_budget <= 0:
            raise ValueError("wall_clock_budget must be positive")
        grids = {k: list(v) for k, v in DEFAULT_GRIDS.items()}
        unknown = set(self.coarse_grids) - set(grids)
        if unknown:
            raise ValueError(f"unknown coarse grid(s): {sorted(unknown)}")
        grids.update({k: list(v) for k, v in self.coarse_grids.items()})
        self.coarse_grids = grids
        bad = [v for v in grids["threads_per_block"]
               if not (WARP_SIZE <= v <= 1024 and v % WARP_SIZE == 0)]
        if bad:
            raise ValueError(f"threads_per_block grid values {bad} are not multiples of 32 "
                             "in [32, 1024]")
        for key in ("rows_per_block", "nnz_per_block", "bin_base"):
            if any(v < 1 for v in grids[key]) or (key == "bin_base" and min(grids[key]) < 2):
                raise ValueError(f"{key} grid values must be positive")
        self.branch_counts = tuple(self.branch_counts)


# -- pruning -----------------------------------------------------------------

@dataclass(frozen=True)
class BanList:
    """Kinds banned outright plus graph-context rules.

    Context rules: SORT_BMTB is redundant after a full SORT, and a TOTAL
    reduction can never be feasible at an nnz-blocked level (its blocks
    would have to fall inside one row).
    """

    kinds: frozenset = frozenset()
    context: bool = True

    def banned_for(self, kinds) -> frozenset:
        out = set(self.kinds)
        if self.context:
            kinds = list(kinds)
            if K.SORT in kinds:
                out.add(K.SORT_BMTB)
            for lvl, how in path_state(kinds).blocks:
                if how == "nnz":
                    out.add(TOTAL_OF_LEVEL[lvl])
        return frozenset(out)

    def __contains__(self, kind):
        return kind in self.kinds


NO_BANS = BanList(frozenset(), context=False)


def build_ban_list(stats: MatrixStats, graph=None, user=()) -> BanList:
    """Built-in rules for ``stats`` merged with user-supplied kind names.

    ``graph`` is accepted for symmetry with the context rules, which are
    evaluated lazily per path by :meth:`BanList.banned_for`.
    """
    banned = set()
    if not stats.is_irregular:
        banned |= REGULAR_BANS
    if stats.max_row_len <= WARP_SIZE:
        banned.add(K.SHMEM_OFFSET_RED)
    for name in user:
        banned.add(K(name) if not isinstance(name, OperatorKind) else name)
    return BanList(frozenset(banned))


# -- structures ---------------------------------------------------------------

def _grow(g, node, rng, ban, branch_counts):
    """Append a random legal chain below ``node`` until GMEM_ATOM_RED."""
    leaf = node
    while True:
        succ = sorted(legal_successors(g, leaf, ban), key=lambda k: k.value)
        if not succ:
            raise DeadEnd(f"no legal successor after {g.nodes[leaf].kind.value}")
        kind = succ[int(rng.integers(len(succ)))]
        nid = g.add(leaf, kind)
        if kind is K.GMEM_ATOM_RED:
            return
        if kind in DIVISIONS:
            for _ in range(int(rng.choice(branch_counts))):
                _grow(g, nid, rng, ban, branch_counts)
            return
        leaf = nid


def enumerate_structure(rng, stats=None, ban=None, attempts=20, branch_counts=(2, 3)):
    """Random complete structure (parameters unset) avoiding banned kinds."""
    for _ in range(attempts):
        g = OperatorGraph()
        try:
            _grow(g, g.root, rng, ban, branch_counts)
        except DeadEnd:
            continue
        return g
    raise DeadEnd(f"could not complete a structure in {attempts} attempts")


def mutate(g, rng, stats=None, ban=None, attempts=20, branch_counts=(2, 3)):
    """Replace the subtree under a random node by freshly grown operators."""
    base = strip_params(g)
    candidates = [n for n in base.preorder() if n != base.root]
    for _ in range(attempts):
        h = base.copy()
        nid = candidates[int(rng.integers(len(candidates)))]
        parent = h.parent[nid]
        pos = h.children[parent].index(nid)
        h.remove_subtree(nid)
        try:
            _grow(h, parent, rng, ban, branch_counts)
        except DeadEnd:
            continue
        kids = h.children[parent]
        kids.insert(pos, kids.pop())
        return canonical(h)
    raise DeadEnd("mutation could not regrow a legal subtree")


def strip_params(g):
    h = canonical(g)
    for n in h.nodes.values():
        n.params = {}
    return h


def structure_id(g) -> str:
    return hashlib.sha1(serialize_graph(strip_params(g)).encode()).hexdigest()[:12]


def csr_scalar_graph() -> OperatorGraph:
    return OperatorGraph.chain(K.COMPRESS, (K.BMT_ROW_BLOCK, {"rows_per_block": 1}),
                               K.THREAD_TOTAL_RED, K.GMEM_ATOM_RED)


def count_structures(max_depth, ban=None, branch_counts=(2, 3)) -> int:
    """Exact number of complete structures whose paths have <= ``max_depth`` operators.

    A division with ``c`` stripes contributes ``n**c`` completions for ``n``
    completions per stripe.  Memoised on the path state, which together with
    "SORT on path" determines every built-in ban.
    """
    from .opgraph import OPERATORS

    banner = ban if ban is not None else NO_BANS

    @lru_cache(maxsize=None)
    def completions(kinds, depth):
        if depth == 0:
            return 0
        st = path_state(kinds)
        banned = banner.banned_for(kinds)
        total = 0
        for k in OPERATORS:
            if k in banned:
                continue
            try:
                st.advance(k)
            except RuleViolation:
                continue
            if k is K.GMEM_ATOM_RED:
                total += 1
            elif k in DIVISIONS:
                sub = completions(kinds + (k,), depth - 1)
                total += sum(sub ** c for c in branch_counts)
            else:
                total += completions(kinds + (k,), depth - 1)
        return total

    return completions((), max_depth)


# -- parameters ---------------------------------------------------------------

@dataclass(frozen=True)
class Knob:
    node: int
    name: str
    values: tuple
    categorical: bool = False

    @property
    def label(self):
        return f"{self.node}.{self.name}"


def _descendant_kinds(g, nid):
    out, stack = set(), [nid]
    while stack:
        n = stack.pop()
        out.add(g.nodes[n].kind)
        stack.extend(g.children[n])
    return out


def param_space(g, grids=None):
    """Knobs of every parameterised node, in preorder."""
    grids = grids or DEFAULT_GRIDS
    knobs = []
    for nid in g.preorder():
        kind = g.nodes[nid].kind
        if kind is K.ROW_DIV:
            knobs.append(Knob(nid, "degree", tuple(grids["degree"])))
        elif kind is K.SORT_SUB:
            knobs.append(Knob(nid, "group", tuple(grids["sort_sub_group"])))
        elif kind is K.BIN:
            knobs.append(Knob(nid, "base", tuple(grids["bin_base"])))
        elif kind.value.endswith("ROW_BLOCK"):
            total = TOTAL_OF_LEVEL[kind.level] in _descendant_kinds(g, nid)
            vals = (1,) if total else tuple(grids["rows_per_block"])
            knobs.append(Knob(nid, "rows_per_block", vals))
        elif kind.value.endswith("NNZ_BLOCK"):
            scale = NNZ_SCALE[kind.level]
            knobs.append(Knob(nid, "nnz_per_block",
                              tuple(v * scale for v in grids["nnz_per_block"])))
        elif kind is K.BMT_PAD:
            has_bmtb = any(k.level == "bmtb" for k in g.kinds_to(nid))
            vals = tuple(grids["pad_scope"]) if has_bmtb else ("global",)
            knobs.append(Knob(nid, "scope", vals, categorical=True))
        elif kind is K.SET_RESOURCES:
            knobs.append(Knob(nid, "threads_per_block", tuple(grids["threads_per_block"])))
    return knobs


def grid_points(knobs, rng=None, cap=None):
    """Cartesian grid, subsampled without replacement to ``cap`` points."""
    sizes = [len(k.values) for k in knobs]
    total = int(np.prod(sizes)) if sizes else 1
    if cap is None or total <= cap:
        idx = range(total)
    else:
        rng = rng if rng is not None else np.random.default_rng(0)
        idx = sorted(rng.choice(total, size=cap, replace=False).tolist())
    out = []
    for i in idx:
        pt = []
        for k, s in zip(reversed(knobs), reversed(sizes)):
            pt.append(k.values[i % s])
            i //= s
        out.append(tuple(reversed(pt)))
    return out


def point_vector(knobs, point):
    return [k.values.index(v) if k.categorical else v for k, v in zip(knobs, point)]


def discretize_row_mutation(stats, row_lengths, degree, max_cuts=None):
    """Cut positions where neighbouring row lengths jump by >= degree * avg."""
    lengths = np.asarray(row_lengths, dtype=np.int64)
    if len(lengths) < 2:
        return []
    avg = stats.avg_row_len if stats is not None else float(lengths.mean())
    jump = np.abs(np.diff(lengths))
    ok = (jump >= degree * avg) & (jump > 0)
    pos = np.flatnonzero(ok) + 1
    if max_cuts is not None and len(pos) > max_cuts:
        order = np.lexsort((pos, -jump[pos - 1]))     # strongest jumps first
        pos = np.sort(pos[order[:max_cuts]])
    return pos.tolist()


def _complete_cuts(cuts, n, needed):
    """Add cuts halving the largest stripe until there are ``needed``."""
    cuts = sorted(cuts)
    while len(cuts) < needed:
        bounds = [0] + cuts + [n]
        widths = [b - a for a, b in zip(bounds, bounds[1:])]
        i = int(np.argmax(widths))
        if widths[i] < 2:
            break
        cuts = sorted(cuts + [bounds[i] + widths[i] // 2])
    return cuts


def instantiate(g, knobs, point, m: CooMatrix, stats=None):
    """Copy of ``g`` with parameters from ``point``; raises DesignError if impossible."""
    h = canonical(g)
    for n in h.nodes.values():
        n.params = {}
    stats = stats or compute_stats(m)
    vals = {(k.node, k.name): v for k, v in zip(knobs, point)}
    for nid in h.preorder():
        node = h.nodes[nid]
        kind = node.kind
        if kind is K.ROW_DIV:
            lengths = row_lengths_at(h, nid, m)
            need = len(h.children[nid]) - 1
            cuts = discretize_row_mutation(stats, lengths, vals[(nid, "degree")], need)
            cuts = _complete_cuts(cuts, len(lengths), need)
            if len(cuts) != need:
                raise DesignError(f"cannot cut {len(lengths)} rows into {need + 1} stripes", nid)
            node.params = {"cuts": [int(c) for c in cuts]}
        elif kind is K.COL_DIV:
            c = len(h.children[nid])
            cuts = sorted({int(m.n_cols * i // c) for i in range(1, c)} - {0})
            if len(cuts) != c - 1:
                raise DesignError(f"cannot cut {m.n_cols} columns into {c} stripes", nid)
            node.params = {"cuts": cuts}
        elif kind is K.BIN:
            base = vals[(nid, "base")]
            lengths = row_lengths_at(h, nid, m)
            th, p = [], base
            while p < lengths.max():
                th.append(int(p))
                p *= base
            node.params = {"thresholds": th or [int(base)]}
        else:
            for (n, name), v in vals.items():
                if n == nid:
                    node.params[name] = v.item() if hasattr(v, "item") else v
    return h


# -- evaluation ---------------------------------------------------------------

@dataclass
class Measurement:
    gflops: float
    bytes: int
    seconds: float
    status: str = "ok"
    plan: object = None
    fmt: object = None


def oracle_tolerance(m: CooMatrix, x):
    return 1e-12 * max(m.inf_norm(), 1e-300) * max(float(np.abs(x).max()) if len(x) else 0, 1e-300)


def compile_design(g, m, precision="f64", patch_budget=8, compress=True, optimize=True):
    """Graph -> (plan, format), with optional compression and store optimization."""
    ms = execute_graph(g, m)
    plan = build_plan(g, ms, precision=precision)
    if optimize:
        optimize_plan(plan)
    fmt = build_format(ms, required_keys(plan), precision)
    if compress:
        plan, fmt = apply_compression(plan, fmt, patch_budget)
    return plan, fmt


def evaluate_design(g, m, x, cfg: SearchConfig, y_ref=None) -> Measurement:
    try:
        plan, fmt = compile_design(g, m, cfg.precision, cfg.patch_budget)
        rep = benchmark(plan, fmt, x, reps=cfg.bench_reps, warmup=cfg.bench_warmup,
                        clock=cfg.clock, workers=cfg.workers)
    except (DesignError, InvalidGraph, ExecutionError, MissingResource, MissingKey,
            NoAdapterRule) as exc:
        return Measurement(0.0, 0, 0.0, f"infeasible: {type(exc).__name__}")
    y_ref = spmv_oracle(m, x) if y_ref is None else y_ref
    tol = oracle_tolerance(m, x) if cfg.precision == "f64" else 1e-4 * (1 + np.abs(y_ref).max())
    if np.abs(rep.y - y_ref).max() > tol:
        return Measurement(0.0, 0, 0.0, "oracle mismatch")
    return Measurement(rep.gflops, rep.bytes_touched, rep.elapsed_seconds, "ok", plan, fmt)


# -- logging ------------------------------------------------------------------

LOG_COLUMNS = ("timestamp", "graph_id", "params", "gflops", "bytes", "kind")


@dataclass
class SearchRecord:
    timestamp: float
    graph_id: str
    params: dict
    gflops: float
    bytes: int
    kind: str                   # 'measured' | 'predicted'
    status: str = "ok"

    def row(self):
        return [f"{self.timestamp:.9f}", self.graph_id,
                json.dumps(self.params, sort_keys=True, separators=(",", ":")),
                f"{self.gflops:.6f}", str(self.bytes), self.kind]


class SearchLog:
    """Append-only record list, mirrored to a CSV stream when one is given."""

    def __init__(self, stream=None):
        self.records = []
        self.stream = stream
        if stream is not None:
            csv.writer(stream, lineterminator="\n").writerow(LOG_COLUMNS)

    def append(self, rec: SearchRecord):
        self.records.append(rec)
        if self.stream is not None:
            csv.writer(self.stream, lineterminator="\n").writerow(rec.row())
            self.stream.flush()

    def measured(self):
        return [r for r in self.records if r.kind == "measured"]

    def best_so_far(self):
        out, best = [], 0.0
        for r in self.measured():
            best = max(best, r.gflops)
            out.append(best)
        return out


def read_log(text):
    rows = list(csv.reader(io.StringIO(text)))
    return [dict(zip(rows[0], r)) for r in rows[1:]]


# -- annealing ----------------------------------------------------------------

@dataclass
class AnnealState:
    t: float
    best: float = 0.0
    shortfalls: list = field(default_factory=list)


def anneal_step(state: AnnealState, candidate, rng=None, alpha=0.9):
    """Metropolis acceptance against the best value; cools by ``alpha``."""
    best = state.best
    if candidate >= best or best <= 0:
        accept = True
    else:
        p = math.exp((candidate - best) / (state.t * best)) if state.t > 0 else 0.0
        u = rng.random() if rng is not None else 0.5
        accept = u < p
    short = max(0.0, (best - candidate) / best) if best > 0 else 0.0
    new = AnnealState(alpha * state.t, max(best, candidate), state.shortfalls + [short])
    return accept, new


def acceptance_probability(state: AnnealState, window=8):
    """Probability of accepting the median recent relative shortfall at ``t``."""
    if not state.shortfalls or state.t <= 0:
        return 1.0 if not state.shortfalls else 0.0
    s = float(np.median(state.shortfalls[-window:]))
    return math.exp(-s / state.t)


# -- refinement ---------------------------------------------------------------

def _snap(knob, v):
    if knob.name == "threads_per_block":
        return int(min(1024, max(32, int(round(v / WARP_SIZE)) * WARP_SIZE)))
    if knob.name == "degree":
        return round(float(v), 3)
    lo = 2 if knob.name == "group" else 1
    return int(max(lo, int(round(v))))


def fine_values(knob, best_value, factor=2):
    """Coarse neighbourhood of ``best_value`` with every step divided by ``factor``."""
    if knob.categorical or len(knob.values) == 1:
        return [best_value]
    vals = sorted(knob.values)
    i = vals.index(best_value)
    nb = vals[max(i - 1, 0): i + 2]
    out = []
    for a, b in zip(nb, nb[1:]):
        out += [a + (b - a) * j / factor for j in range(factor)]
    out.append(nb[-1])
    snapped = []
    for v in out:
        s = _snap(knob, v)
        if s not in snapped:
            snapped.append(s)
    return snapped


def fine_refine(model, knobs, coarse_best, factor=2, k=3, measured=(), features=()):
    """Top-``k`` predicted fine-grid points around ``coarse_best`` not yet measured."""
    if k <= 0:
        return []
    axes = [fine_values(kn, v, factor) for kn, v in zip(knobs, coarse_best)]
    cands = [tuple(p) for p in itertools.product(*axes)]
    measured = set(measured)
    cands = [p for p in cands if p not in measured]
    if not cands:
        return []
    X = [encode(point_vector(knobs, p), features) for p in cands]
    pred = model.predict(X)
    order = sorted(range(len(cands)), key=lambda i: (-pred[i], i))
    return [cands[i] for i in order[:k]]


# -- driver -------------------------------------------------------------------

@dataclass
class Candidate:
    graph: OperatorGraph
    gflops: float
    bytes: int
    plan: object
    fmt: object
    point: dict


@dataclass
class SearchResult:
    best: Candidate
    log: SearchLog
    structures: int
    stop_reason: str
    elapsed: float
    reached_target_at: int = None
    seed_gflops: float = 0.0


def make_x(m: CooMatrix, seed=0):
    return np.random.default_rng(seed).uniform(-1.0, 1.0, m.n_cols)


def _better(cand: Candidate, best: Candidate):
    if best is None:
        return True
    if cand.gflops != best.gflops:
        return cand.gflops > best.gflops
    if cand.bytes != best.bytes:
        return cand.bytes < best.bytes
    return serialize_graph(cand.graph) < serialize_graph(best.graph)


class _Searcher:
    def __init__(self, m, cfg: SearchConfig, log: SearchLog, deadline, target=None):
        self.m, self.cfg, self.log = m, cfg, log
        self.stats = compute_stats(m)
        self.features = self.stats.features()
        self.x = make_x(m, cfg.seed)
        self.y_ref = spmv_oracle(m, self.x)
        self.deadline = deadline
        self.target = target
        self.clock = 0.0
        self.best = None
        self.truncated = False

    def out_of_time(self):
        return time.monotonic() >= self.deadline

    def measure(self, g, sid, knobs, point):
        try:
            h = instantiate(g, knobs, point, self.m, self.stats)
            meas = evaluate_design(h, self.m, self.x, self.cfg, self.y_ref)
        except DesignError as exc:
            h, meas = None, Measurement(0.0, 0, 0.0, f"infeasible: {type(exc).__name__}")
        if self.cfg.clock == "model":
            self.clock += meas.seconds * (self.cfg.bench_reps + self.cfg.bench_warmup)
        else:
            self.clock = time.monotonic() - (self.deadline - self.cfg.wall_clock_budget)
        params = {k.label: v for k, v in zip(knobs, point)}
        self.log.append(SearchRecord(self.clock, sid, params, meas.gflops, meas.bytes,
                                     "measured", meas.status))
        if meas.gflops > 0:
            cand = Candidate(h, meas.gflops, meas.bytes, meas.plan, meas.fmt, params)
            if _better(cand, self.best):
                self.best = cand
        return meas.gflops

    def structure(self, g, rng):
        """Coarse grid, surrogate, fine refinement; returns the structure's best."""
        sid = structure_id(g)
        knobs = param_space(g, self.cfg.coarse_grids)
        points = grid_points(knobs, rng, self.cfg.max_grid_points)
        scores = {}
        for p in points:
            if self.out_of_time():
                self.truncated = True
                break
            scores[p] = self.measure(g, sid, knobs, p)
            if self.reached():
                return max(scores.values())
        good = {p: s for p, s in scores.items() if s > 0}
        if good and self.cfg.fine_top_k > 0 and knobs and not self.out_of_time():
            X = [encode(point_vector(knobs, p), self.features) for p in scores]
            model = fit_or_fallback(X, list(scores.values()), self.cfg.surrogate, self.cfg.seed)
            top = max(sorted(good), key=lambda p: good[p])
            nominees = fine_refine(model, knobs, top, self.cfg.fine_refine_factor,
                                   self.cfg.fine_top_k, scores.keys(), self.features)
            preds = model.predict([encode(point_vector(knobs, p), self.features)
                                   for p in nominees]) if nominees else []
            for p, pr in zip(nominees, preds):
                self.log.append(SearchRecord(self.clock, sid, {k.label: v for k, v in zip(knobs, p)},
                                             float(pr), 0, "predicted"))
            for p in nominees:
                if self.out_of_time():
                    self.truncated = True
                    break
                scores[p] = self.measure(g, sid, knobs, p)
                if self.reached():
                    break
        return max(scores.values()) if scores else 0.0

    def reached(self):
        return (self.target is not None and self.best is not None
                and self.best.gflops >= self.target)


def search(m: CooMatrix, cfg: SearchConfig = None, log_stream=None, target_gflops=None):
    """Run the full search; returns a :class:`SearchResult`.

    With ``target_gflops`` the search stops as soon as a measured design
    reaches it and ``reached_target_at`` holds the 1-based structure count.
    """
    cfg = cfg or SearchConfig()
    t_start = time.monotonic()
    deadline = t_start + cfg.wall_clock_budget
    rng = np.random.default_rng(cfg.seed)
    log = SearchLog(log_stream)
    s = _Searcher(m, cfg, log, deadline, target_gflops)
    ban = build_ban_list(s.stats, user=cfg.user_bans) if cfg.prune else \
        BanList(frozenset(K(u) for u in cfg.user_bans), context=False)

    state = AnnealState(cfg.sa.t0)
    seed_gflops = 0.0
    if cfg.seed_csr:
        seed_gflops = s.structure(csr_scalar_graph(), rng)
        _, state = anneal_step(state, seed_gflops, rng, 1.0)
        state.shortfalls.clear()
    current, seen, n_struct, reason, hit = None, set(), 0, "max_structures", None
    if s.reached():
        reason, hit = "target", 0
    while reason != "target" and n_struct < cfg.max_structures:
        if s.out_of_time():
            reason = "budget"
            break
        g = None
        for _ in range(10):
            if current is None or rng.random() < cfg.p_fresh:
                cand = enumerate_structure(rng, s.stats, ban, branch_counts=cfg.branch_counts)
            else:
                cand = mutate(current, rng, s.stats, ban, branch_counts=cfg.branch_counts)
            if structure_id(cand) not in seen:
                g = cand
                break
        if g is None:
            reason = "exhausted"
            break
        seen.add(structure_id(g))
        n_struct += 1
        value = s.structure(g, rng)
        if s.reached():
            reason, hit = "target", n_struct
            break
        if s.truncated:
            reason = "budget"
            break
        accept, state = anneal_step(state, value, rng, cfg.sa.alpha)
        if accept:
            current = g
        if (len(state.shortfalls) >= 3
                and acceptance_probability(state, cfg.shortfall_window) < cfg.sa.min_accept):
            reason = "annealing"
            break
    if s.best is None:
        raise NoFeasibleDesign("no feasible design found within the budget")
    # final re-verification of the chosen design
    y = execute_plan(s.best.plan, s.best.fmt, s.x)
    if np.abs(y - s.y_ref).max() > oracle_tolerance(m, s.x) and cfg.precision == "f64":
        raise NoFeasibleDesign("best design failed oracle re-verification")
    return SearchResult(s.best, log, n_struct, reason, time.monotonic() - t_start, hit,
                        seed_gflops)


def random_design(rng, m: CooMatrix, ban=None, attempts=50, branch_counts=(2, 3),
                  grids=None):
    """Random feasible (graph, plan, format) for ``m``; used by fuzzing."""
    stats = compute_stats(m)
    last = None
    for _ in range(attempts):
        g = enumerate_structure(rng, stats, ban, branch_counts=branch_counts)
        knobs = param_space(g, grids)
        point = tuple(k.values[int(rng.integers(len(k.values)))] for k in knobs)
        try:
            h = instantiate(g, knobs, point, m, stats)
            execute_graph(h, m)
            return h
        except DesignError as exc:
            last = exc
    raise DeadEnd(f"no feasible random design in {attempts} attempts: {last}")
