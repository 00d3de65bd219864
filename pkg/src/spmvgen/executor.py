"""Simulated block/warp/thread execution of kernel plans.

The executor never looks at the metadata set: it decodes the launch layout
from the format arrays named by the plan's fragments, computes the products
``values[i] * x[col[i]]`` and then runs each reduction stage with the
summation order its fragment prescribes (serial per thread, lane trees and
segmented scans per warp, scratch trees per block).  Array reads go through
an :class:`Accessor` that records what was touched and bounds-checks every
gather, so a plan and format that disagree abort instead of returning
garbage.
"""

from __future__ import annotations

import statistics
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, ExecutionError, MissingKey, OutOfBoundsRead, ScratchOverflow
from .kernelgen import Kernel, KernelPlan
from .opgraph import WARP_SIZE

SCRATCH_BYTES = 48 * 1024
N_LOCKS = 16
MODES = ("deterministic", "parallel")
CLOCKS = ("model", "wall")

# serializes wall-clock measurements across concurrent searches
TIMING_LOCK = threading.Lock()


class Accessor:
    """Read-only view of one kernel's arrays (stored or modeled)."""

    def __init__(self, plan: KernelPlan, fmt, kern: Kernel):
        self.plan, self.fmt, self.kern = plan, fmt, kern
        self.reads = []
        self._cache = {}

    def _resolve(self, key):
        name = self.kern.key(key)
        if name not in self.reads:
            self.reads.append(name)
        if name in self._cache:
            return self._cache[name]
        if name in self.plan.models:
            m = self.plan.models[name]
            a = np.asarray(m(np.arange(m.length)), dtype=np.int64)
        elif name in self.fmt.arrays:
            a = self.fmt.arrays[name]
            if a.dtype.kind in "iu":
                a = a.astype(np.int64)
        else:
            raise MissingKey(name)
        self._cache[name] = a
        return a

    def array(self, key):
        return self._resolve(key)

    def length(self, key):
        return len(self._resolve(key))

    def take(self, key, idx):
        a = self._resolve(key)
        idx = np.asarray(idx, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= len(a)):
            bad = idx[(idx < 0) | (idx >= len(a))][0]
            raise OutOfBoundsRead(f"{self.kern.key(key)}[{bad}] outside length {len(a)}")
        return a[idx]


def _gather(a, idx, what):
    if idx.size and (idx.min() < 0 or idx.max() >= len(a)):
        bad = idx[(idx < 0) | (idx >= len(a))][0]
        raise OutOfBoundsRead(f"{what}[{bad}] outside length {len(a)}")
    return a[idx]


def _expand_ranges(start, length):
    """Concatenation of ``arange(s, s + n)`` for every (s, n)."""
    if np.any(length < 0):
        raise OutOfBoundsRead("negative block extent (offsets not monotone)")
    total = int(length.sum())
    owner = np.repeat(np.arange(len(start)), length)
    first = np.concatenate([[0], np.cumsum(length)[:-1]]) if len(length) else length
    return start[owner] + np.arange(total) - first[owner], owner


def _runs(keys):
    if len(keys) == 0:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate([[0], np.flatnonzero(keys[1:] != keys[:-1]) + 1]).astype(np.int64)


def _rank_in_group(keys):
    """Position of every element inside its run of equal keys."""
    starts = _runs(keys)
    lens = np.diff(np.concatenate([starts, [len(keys)]]))
    return np.arange(len(keys)) - np.repeat(starts, lens)


@dataclass
class Layout:
    """Entries a kernel processes, with the enclosing unit of each level."""

    entries: np.ndarray
    units: dict
    n_units: dict
    top: str = None             # outermost level present


def decode_layout(kern: Kernel, acc: Accessor) -> Layout:
    levels = [lp.level for lp in kern.loops]
    units, n_units = {}, {}
    if "bmt" in levels:
        bmt_meta = kern.loop("bmt").meta[0]
        if bmt_meta.op == "bmt_range_padded":
            bnz = acc.array("bmtb_nz_offsets")
            if "bmw" in levels:
                fb = acc.take("bmw_bmt_offsets", acc.array("bmtb_bmw_offsets"))
            else:
                fb = acc.array("bmtb_bmt_offsets")
            sizes = acc.array("bmt_sizes_of_bmtb")
            nb = len(fb) - 1
            if len(bnz) != nb + 1 or len(sizes) < nb:
                raise OutOfBoundsRead("block arrays disagree on the number of BMTBs")
            per = np.diff(fb)
            if np.any(per < 0):
                raise OutOfBoundsRead("bmtb child offsets not monotone")
            owner = np.repeat(np.arange(nb), per)
            t = np.arange(int(fb[-1]) if nb else 0)
            start = bnz[owner] + (t - fb[owner]) * sizes[owner]
            length = sizes[owner]
        else:
            off = acc.array("bmt_nz_offsets")
            start, length = off[:-1], np.diff(off)
        entries, bmt_of = _expand_ranges(start, length)
        units["bmt"] = bmt_of
        n_units["bmt"] = len(start)
        if "bmw" in levels:
            wo = acc.array("bmw_bmt_offsets")
            bmw_of_t = np.searchsorted(wo, np.arange(len(start)), side="right") - 1
            units["bmw"] = bmw_of_t[bmt_of]
            n_units["bmw"] = len(wo) - 1
        if "bmtb" in levels:
            if "bmw" in levels:
                bo = acc.array("bmtb_bmw_offsets")
                bmtb_of_w = np.searchsorted(bo, np.arange(n_units["bmw"]), side="right") - 1
                units["bmtb"] = bmtb_of_w[units["bmw"]]
            else:
                bo = acc.array("bmtb_bmt_offsets")
                bmtb_of_t = np.searchsorted(bo, np.arange(len(start)), side="right") - 1
                units["bmtb"] = bmtb_of_t[bmt_of]
            n_units["bmtb"] = len(bo) - 1
    elif "bmw" in levels:
        off = acc.array("bmw_nz_offsets")
        entries, bmw_of = _expand_ranges(off[:-1], np.diff(off))
        units["bmw"], n_units["bmw"] = bmw_of, len(off) - 1
        if "bmtb" in levels:
            bo = acc.array("bmtb_bmw_offsets")
            units["bmtb"] = (np.searchsorted(bo, np.arange(len(off) - 1), side="right") - 1)[bmw_of]
            n_units["bmtb"] = len(bo) - 1
    elif "bmtb" in levels:
        off = acc.array("bmtb_nz_offsets")
        entries, bmtb_of = _expand_ranges(off[:-1], np.diff(off))
        units["bmtb"], n_units["bmtb"] = bmtb_of, len(off) - 1
    else:
        entries = np.arange(acc.length("values"), dtype=np.int64)
    return Layout(entries.astype(np.int64), units, n_units, levels[0] if levels else None)


# -- reduction stages --------------------------------------------------------

@dataclass
class Partials:
    v: np.ndarray               # values
    head: np.ndarray            # first entry each partial covers
    units: dict                 # level -> unit id per partial
    rows: np.ndarray = None     # local row per partial (when known)


def _select(p: Partials, keep, v):
    return Partials(v, p.head[keep], {k: u[keep] for k, u in p.units.items()},
                    None if p.rows is None else p.rows[keep])


def _unit_rows(acc, args, unit_ids):
    if args["source"] == "identity":
        return unit_ids.astype(np.int64)
    return acc.take(args["source"], unit_ids)


def _offset_in_unit(flags, unit):
    """Inclusive running count of ``flags`` restarted at every unit."""
    c = np.cumsum(flags, dtype=np.int64)
    starts = _runs(unit)
    base = c[starts] - flags[starts]
    lens = np.diff(np.concatenate([starts, [len(unit)]]))
    return c - np.repeat(base, lens)


def _warp_segmented(v, group, head):
    """Segmented lane reduction: per-round Hillis-Steele scan, then round merge.

    ``group`` is the warp-unit id of every partial, ``head`` marks partials
    that start a new segment (group starts are always heads).  Returns the
    sum of every segment in order.
    """
    n = len(v)
    seg = np.cumsum(head) - 1
    k = _rank_in_group(group)
    rnd_key = group * (int(k.max()) // WARP_SIZE + 1 if n else 1) + k // WARP_SIZE
    rid = np.cumsum(np.concatenate([[1], (rnd_key[1:] != rnd_key[:-1]).astype(np.int64)])) - 1
    lane = k % WARP_SIZE
    n_r = int(rid[-1]) + 1 if n else 0
    V = np.zeros((n_r, WARP_SIZE), dtype=v.dtype)
    F = np.ones((n_r, WARP_SIZE), dtype=bool)
    occ = np.zeros((n_r, WARP_SIZE), dtype=bool)
    V[rid, lane] = v
    F[rid, lane] = head | (lane == 0)
    occ[rid, lane] = True
    # a lane is a segment tail if the next lane starts a segment or is empty
    nxt_head = np.ones((n_r, WARP_SIZE), dtype=bool)
    nxt_head[:, :-1] = ~occ[:, 1:] | F[:, 1:]
    tail = occ & nxt_head
    d = 1
    while d < WARP_SIZE:
        Vn = V.copy()
        Vn[:, d:] = np.where(F[:, d:], V[:, d:], V[:, d:] + V[:, :-d])
        F = F.copy()
        F[:, d:] |= F[:, :-d].copy()
        V = Vn
        d *= 2
    tails = V[tail]
    tail_seg = np.zeros((n_r, WARP_SIZE), dtype=np.int64)
    tail_seg[rid, lane] = seg
    tseg = tail_seg[tail]
    return np.add.reduceat(tails, _runs(tseg)) if len(tails) else tails


def _scratch_check(counts, itemsize, what):
    if len(counts) and int(counts.max()) * itemsize > SCRATCH_BYTES:
        raise ScratchOverflow(
            f"{what}: {int(counts.max())} partials x {itemsize} B exceed {SCRATCH_BYTES} B")


def run_stage(acc: Accessor, frag, p: Partials, trace=None) -> Partials:
    op, level = frag.op, frag.args["level"]
    unit = p.units[level]
    starts = _runs(unit)
    emit = frag.args.get("emit_rows", False)
    if op == "THREAD_TOTAL_RED":
        out = _select(p, starts, np.add.reduceat(p.v, starts) if len(starts) else p.v[:0])
        if emit:
            out.rows = _unit_rows(acc, frag.args, out.units[level])
    elif op == "THREAD_BITMAP_RED":
        flags = acc.take("row_bitmap", p.head).astype(np.int64)
        is_start = np.zeros(len(unit), dtype=bool)
        is_start[starts] = True
        flags[is_start] = 0
        heads = np.flatnonzero((flags == 1) | is_start)
        out = _select(p, heads, np.add.reduceat(p.v, heads) if len(heads) else p.v[:0])
        if emit:
            off = _offset_in_unit(flags, unit)[heads]
            out.rows = _unit_rows(acc, frag.args, out.units[level]) + off
    elif op == "WARP_TOTAL_RED":
        lane = _rank_in_group(unit) % WARP_SIZE
        gid = np.repeat(np.arange(len(starts)), np.diff(np.concatenate([starts, [len(unit)]])))
        lanes = np.zeros((len(starts), WARP_SIZE), dtype=p.v.dtype)
        np.add.at(lanes, (gid, lane), p.v)
        off = WARP_SIZE // 2
        while off:
            lanes[:, :off] += lanes[:, off:2 * off]
            off //= 2
        out = _select(p, starts, lanes[:, 0])
        if emit:
            out.rows = _unit_rows(acc, frag.args, out.units[level])
    elif op in ("WARP_SEG_RED", "WARP_BITMAP_RED"):
        is_start = np.zeros(len(unit), dtype=bool)
        is_start[starts] = True
        if op == "WARP_SEG_RED":
            if p.rows is None:
                raise ExecutionError("WARP_SEG_RED needs the rows of its input")
            head = is_start.copy()
            head[1:] |= p.rows[1:] != p.rows[:-1]
            flags = None
        else:
            flags = acc.take("warp_red_bitmap", p.head).astype(np.int64)
            flags[is_start] = 0
            head = is_start | (flags == 1)
        heads = np.flatnonzero(head)
        sums = _warp_segmented(p.v, unit, head)
        out = _select(p, heads, sums)
        if op == "WARP_SEG_RED":
            out.rows = p.rows[heads] if emit else None
        elif emit:
            out.rows = (_unit_rows(acc, frag.args, out.units[level])
                        + _offset_in_unit(flags, unit)[heads])
    elif op == "SHMEM_TOTAL_RED":
        counts = np.diff(np.concatenate([starts, [len(unit)]]))
        _scratch_check(counts, p.v.itemsize, op)
        width = 1
        while width < (int(counts.max()) if len(counts) else 1):
            width *= 2
        S = np.zeros((len(starts), width), dtype=p.v.dtype)
        gid = np.repeat(np.arange(len(starts)), counts)
        S[gid, _rank_in_group(unit)] = p.v
        while width > 1:
            width //= 2
            S[:, :width] += S[:, width:2 * width]
        out = _select(p, starts, S[:, 0])
        if emit:
            out.rows = _unit_rows(acc, frag.args, out.units[level])
    elif op == "SHMEM_OFFSET_RED":
        counts = np.diff(np.concatenate([starts, [len(unit)]]))
        _scratch_check(counts, p.v.itemsize, op)
        blocks = unit[starts]
        rro = acc.array("reduce_row_offsets")
        if "bmtb_row_offsets" in frag.reads:
            bro = acc.array("bmtb_row_offsets")
            lo = _gather(bro, blocks, "bmtb_row_offsets")
            hi = _gather(bro, blocks + 1, "bmtb_row_offsets")
            s_start, s_len = lo + blocks, hi - lo + 1
            base = lo
        else:
            rss = acc.array("reduce_slice_starts")
            s_start = _gather(rss, blocks, "reduce_slice_starts")
            nxt = np.append(rss, len(rro))
            s_len = _gather(nxt, blocks + 1, "reduce_slice_starts") - s_start
            base = acc.take("first_row_of_bmtb", blocks) if emit else None
        idx, owner = _expand_ranges(s_start, s_len)
        local = _gather(rro, idx, "reduce_row_offsets")
        first = np.concatenate([[0], np.cumsum(s_len)[:-1]]).astype(np.int64)
        last = first + s_len - 1
        if np.any(local[first] != 0) or np.any(local[last] != counts) or np.any(np.diff(local) < 0):
            raise OutOfBoundsRead("reduce_row_offsets do not match the block's partials")
        is_last = np.zeros(len(local), dtype=bool)
        is_last[last] = True
        seg_start = (local + starts[owner])[~is_last]
        seg_owner = owner[~is_last]
        seg_j = _rank_in_group(seg_owner)
        sums = np.add.reduceat(p.v, seg_start) if len(seg_start) else p.v[:0]
        out = _select(p, seg_start, sums)
        if emit:
            out.rows = base[seg_owner] + seg_j
    else:
        raise ExecutionError(f"unknown reduction {op}")
    if trace is not None:
        trace.append((op, level, p.head, out.head))
    return out


# -- driver ------------------------------------------------------------------

@dataclass
class KernelRun:
    kern: Kernel
    acc: Accessor
    layout: Layout
    products: np.ndarray
    chunks: list
    rows: np.ndarray = None     # per processed entry, when the plan reads them
    trace: list = field(default_factory=list)
    outputs: list = field(default_factory=list)   # (head entries, y rows) per chunk


def _prepare(plan, fmt, kern, x, dtype):
    acc = Accessor(plan, fmt, kern)
    for lp in kern.loops:           # every meta array is part of the launch
        for f in lp.meta:
            for r in f.reads:
                acc.array(r)
    lay = decode_layout(kern, acc)
    vals = acc.take("values", lay.entries).astype(dtype, copy=False)
    cols = acc.take("col_indices", lay.entries)
    prods = vals * _gather(x, cols, "x")
    run = KernelRun(kern, acc, lay, prods, [])
    erow = [f for f in kern.entry if f.op == "entry_rows"]
    if erow:
        args = erow[0].args
        if args["source"] == "row_indices":
            run.rows = acc.take("row_indices", lay.entries)
        else:
            run.rows = _unit_rows(acc, args, lay.units[args["level"]])
    # chunks end on top-level unit boundaries so reductions never straddle them
    n = len(lay.entries)
    if lay.top is None:
        tpb = kern.geometry.threads_per_block
        bounds = np.arange(0, n + tpb, tpb)
    else:
        starts = _runs(lay.units[lay.top])
        bounds = np.append(starts, n)
    bounds = np.unique(np.clip(bounds, 0, n))
    run.chunks = list(zip(bounds[:-1].tolist(), bounds[1:].tolist())) or [(0, 0)]
    return run


def _chunk_partials(run: KernelRun, a, b, trace=None):
    lay = run.layout
    p = Partials(run.products[a:b], lay.entries[a:b],
                 {k: u[a:b] for k, u in lay.units.items()},
                 None if run.rows is None else run.rows[a:b])
    for level in ("bmt", "bmw", "bmtb"):
        lp = run.kern.loop(level)
        if lp is not None and lp.reduce is not None:
            p = run_stage(run.acc, lp.reduce, p, trace)
    if p.rows is None:
        raise ExecutionError("plan never materializes the output rows")
    term = run.kern.terminal
    if "origin_rows" in term.reads:
        yrows = run.acc.take("origin_rows", p.rows)
    else:
        yrows = p.rows
    return p, yrows


def _group_chunks(chunks, n_groups):
    if len(chunks) <= n_groups:
        return [[c] for c in chunks]
    size = -(-len(chunks) // n_groups)
    return [chunks[i:i + size] for i in range(0, len(chunks), size)]


def execute_plan(plan: KernelPlan, fmt, x, mode="deterministic", workers=4,
                 return_runs=False):
    """``y = A x`` according to ``plan`` over the arrays of ``fmt``."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    dtype = np.float32 if plan.precision == "f32" else np.float64
    x = np.asarray(x)
    if x.shape != (plan.n_cols,):
        raise DimensionMismatch(f"x has shape {x.shape}, expected ({plan.n_cols},)")
    x = x.astype(dtype, copy=False)
    y = np.zeros(plan.n_rows, dtype=dtype)
    runs = []
    for kern in plan.kernels:
        run = _prepare(plan, fmt, kern, x, dtype)
        runs.append(run)
        direct = kern.terminal.args["mode"] == "direct_store"

        def write(p, yrows, lock=None):
            if yrows.size and (yrows.min() < 0 or yrows.max() >= len(y)):
                raise OutOfBoundsRead(f"output row outside [0, {len(y)})")
            if direct:
                y[yrows] = p.v
            else:
                np.add.at(y, yrows, p.v)

        if mode == "deterministic":
            for a, b in run.chunks:
                p, yrows = _chunk_partials(run, a, b, run.trace if return_runs else None)
                write(p, yrows)
                run.outputs.append((p.head, yrows))
        else:
            locks = [threading.Lock() for _ in range(N_LOCKS)]

            def work(group):
                for a, b in group:
                    p, yrows = _chunk_partials(run, a, b)
                    stripe = yrows % N_LOCKS
                    for s in np.unique(stripe):
                        m = stripe == s
                        with locks[s]:
                            if direct:
                                y[yrows[m]] = p.v[m]
                            else:
                                np.add.at(y, yrows[m], p.v[m])

            groups = _group_chunks(run.chunks, max(1, workers) * 4)
            with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
                for f in [pool.submit(work, g) for g in groups]:
                    f.result()
    if return_runs:
        return y, runs
    return y


@dataclass
class ExecutionReport:
    y: np.ndarray
    elapsed_seconds: float
    gflops: float
    bytes_touched: int
    clock: str = "wall"
    samples: list = field(default_factory=list)


def gflops_of(nnz, seconds):
    return 2.0 * nnz / seconds / 1e9 if seconds > 0 else 0.0


def bytes_touched(plan, fmt, n_out=None):
    """Format bytes plus x gathers and y writes."""
    itemsize = 4 if plan.precision == "f32" else 8
    nnz = sum(k.n_entries for k in plan.kernels)
    return int(fmt.total_bytes + itemsize * (nnz + (n_out or plan.n_rows)))


def benchmark(plan, fmt, x, reps=5, warmup=1, clock="wall", mode="deterministic",
              workers=4, cost=None) -> ExecutionReport:
    """Median-of-``reps`` timing after ``warmup`` discarded runs.

    ``clock="model"`` replaces wall time by the simulated machine's cycle
    estimate, which is deterministic.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    if clock not in CLOCKS:
        raise ValueError(f"clock must be one of {CLOCKS}")
    if clock == "model":
        from .costmodel import estimate_seconds
        y, runs = execute_plan(plan, fmt, x, mode="deterministic", return_runs=True)
        secs = estimate_seconds(plan, runs, cost)
        samples = [secs] * reps
    else:
        samples = []
        with TIMING_LOCK:
            for _ in range(warmup):
                execute_plan(plan, fmt, x, mode=mode, workers=workers)
            for _ in range(reps):
                t0 = time.perf_counter()
                y = execute_plan(plan, fmt, x, mode=mode, workers=workers)
                samples.append(time.perf_counter() - t0)
    elapsed = statistics.median(samples)
    return ExecutionReport(y, elapsed, gflops_of(plan.effective_nnz, elapsed),
                           bytes_touched(plan, fmt), clock, samples)
