"""Deterministic cycle estimate for an executed plan on an abstract GPU.

Warps advance in lockstep: a warp-round costs one step per nonzero of its
longest thread plus one memory transaction per distinct 32-element segment
its lanes touch at each step.  Warp, scratch and global-write reductions
add their own latencies.  A block takes as long as its slowest warp plus
its block-level costs; blocks are scheduled greedily onto a fixed number of
slots.  The numbers only need to rank designs consistently; they are not
calibrated against any real device.
"""

from __future__ import annotations

import heapq
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .opgraph import WARP_SIZE


@dataclass(frozen=True)
class CostConstants:
    step: float = 4.0
    trans: float = 20.0
    alu: float = 1.0
    shfl: float = 2.0
    shmem: float = 4.0
    sync: float = 20.0
    atom: float = 40.0
    store: float = 20.0
    block: float = 200.0
    launch: float = 5000.0
    slots: int = 216
    clock_hz: float = 1.41e9


DEFAULT_COSTS = CostConstants()


def _first_of(groups, ids, n_groups):
    """Smallest ``ids`` value inside every group."""
    out = np.full(max(n_groups, 1), np.iinfo(np.int64).max, dtype=np.int64)
    np.minimum.at(out, groups, ids)
    return out


def _rank(keys):
    if len(keys) == 0:
        return keys
    starts = np.concatenate([[0], np.flatnonzero(keys[1:] != keys[:-1]) + 1])
    lens = np.diff(np.concatenate([starts, [len(keys)]]))
    return np.arange(len(keys)) - np.repeat(starts, lens)


def warp_map(kern, lay):
    """Per processed entry: block id, physical warp id, round and step."""
    tpb = kern.geometry.threads_per_block
    wpb = tpb // WARP_SIZE
    n = len(lay.entries)
    u = lay.units
    pos = np.arange(n, dtype=np.int64)
    zero = np.zeros(n, dtype=np.int64)
    if "bmt" in u:
        t = u["bmt"]
        k = _rank(t)
        if "bmw" in u:
            w = u["bmw"]
            tf = _first_of(w, t, int(w.max()) + 1 if n else 0)
            lane_in = t - tf[w]
            blk = u["bmtb"] if "bmtb" in u else w // wpb
            wf = _first_of(blk, w, int(blk.max()) + 1 if n else 0)
            w_in = w - wf[blk]
            pwarp = blk * wpb + w_in % wpb
            rnd = (w_in // wpb) * 1024 + lane_in // WARP_SIZE
        else:
            blk = u["bmtb"] if "bmtb" in u else t // tpb
            tf = _first_of(blk, t, int(blk.max()) + 1 if n else 0)
            i = t - tf[blk]
            pwarp = blk * wpb + (i % tpb) // WARP_SIZE
            rnd = i // tpb
    elif "bmw" in u:
        w = u["bmw"]
        k = _rank(w) // WARP_SIZE
        blk = u["bmtb"] if "bmtb" in u else w // wpb
        wf = _first_of(blk, w, int(blk.max()) + 1 if n else 0)
        w_in = w - wf[blk]
        pwarp = blk * wpb + w_in % wpb
        rnd = w_in // wpb
    elif "bmtb" in u:
        blk = u["bmtb"]
        p = _rank(blk)
        k = p // tpb
        pwarp = blk * wpb + (p % tpb) // WARP_SIZE
        rnd = zero
    else:
        blk, pwarp, rnd, k = pos // tpb, pos // WARP_SIZE, zero, zero
    return blk.astype(np.int64), pwarp.astype(np.int64), rnd.astype(np.int64), k.astype(np.int64)


def _count_distinct(group, k, seg, n_groups):
    """Number of distinct (k, seg) pairs inside every group."""
    if len(group) == 0:
        return np.zeros(n_groups)
    key = np.stack([group, k, seg])
    uniq = np.unique(key, axis=1)
    return np.bincount(uniq[0], minlength=n_groups).astype(float)


def _array_cost(plan, kern, keys, c):
    """Cost of reading one element of every array in ``keys`` per lane group."""
    total = 0.0
    for key in keys:
        m = plan.models.get(kern.key(key))
        total += c.alu * (1 + len(m.patches)) if m is not None else c.trans
    return total


def kernel_cycles(plan, run, c: CostConstants = DEFAULT_COSTS) -> float:
    kern, lay = run.kern, run.layout
    n = len(lay.entries)
    if n == 0:
        return c.launch
    blk, pwarp, rnd, k = warp_map(kern, lay)
    wr_key = pwarp * (int(rnd.max()) + 1) + rnd
    _, wr = np.unique(wr_key, return_inverse=True)
    n_wr = int(wr.max()) + 1
    wr_pwarp = np.zeros(n_wr, dtype=np.int64)
    wr_pwarp[wr] = pwarp

    steps = np.zeros(n_wr)
    np.maximum.at(steps, wr, k + 1)
    ent = lay.entries
    vbytes = 4 if plan.precision == "f32" else 8
    cols = run.acc.array("col_indices")[ent]
    trans = (_count_distinct(wr, k, ent // 32, n_wr)
             + _count_distinct(wr, k, ent * vbytes // 128, n_wr)
             + _count_distinct(wr, k, cols * vbytes // 128, n_wr))
    wr_time = steps * c.step + trans * c.trans

    # per-thread metadata: one read of every finest-level array per round
    finest = kern.loops[-1] if kern.loops else None
    thread_keys = []
    if finest is not None and finest.level == "bmt":
        thread_keys += [r for f in finest.meta for r in f.reads]
    thread_keys += [r for f in kern.entry[1:] for r in f.reads]
    wr_time += _array_cost(plan, kern, thread_keys, c)

    pos_of = np.full(int(ent.max()) + 1, -1, dtype=np.int64)
    pos_of[ent] = np.arange(n)

    def warp_of(heads):
        return pwarp[pos_of[heads]]

    def block_of(heads):
        return blk[pos_of[heads]]

    warp_extra = defaultdict(float)
    block_extra = defaultdict(float)

    def per_warp(heads, cost_of_count):
        if len(heads) == 0:
            return
        ws, cnt = np.unique(warp_of(heads), return_counts=True)
        for w, cn in zip(ws.tolist(), cnt.tolist()):
            warp_extra[w] += cost_of_count(cn)

    stages = defaultdict(lambda: ([], []))
    for op, level, ins, outs in run.trace:
        stages[op][0].append(ins)
        stages[op][1].append(outs)
    for op, (ins, outs) in stages.items():
        ins, outs = np.concatenate(ins), np.concatenate(outs)
        rounds = lambda cn: -(-cn // WARP_SIZE)  # noqa: E731
        if op == "THREAD_BITMAP_RED":
            wr_in = wr[pos_of[ins]]
            wr_time += steps * c.alu
            wr_time += _count_distinct(wr_in, k[pos_of[ins]], ins // 128, n_wr) * c.trans
        elif op == "WARP_TOTAL_RED":
            per_warp(outs, lambda cn: cn * 5 * c.shfl)
        elif op in ("WARP_SEG_RED", "WARP_BITMAP_RED"):
            extra = c.trans if op == "WARP_BITMAP_RED" else 0.0
            per_warp(ins, lambda cn: rounds(cn) * (5 * (c.shfl + c.alu) + extra))
        elif op in ("SHMEM_TOTAL_RED", "SHMEM_OFFSET_RED"):
            per_warp(ins, lambda cn: rounds(cn) * c.shmem)       # adapter into scratch
            bs, cnt = np.unique(block_of(ins), return_counts=True)
            for b, cn in zip(bs.tolist(), cnt.tolist()):
                if op == "SHMEM_TOTAL_RED":
                    depth = int(np.ceil(np.log2(max(cn, 1))))
                    block_extra[b] += c.sync + depth * (c.shmem + c.sync)
                else:
                    block_extra[b] += c.sync + c.trans * rounds(cn)
            if op == "SHMEM_OFFSET_RED" and len(outs):
                heads = np.sort(outs)
                seg = np.searchsorted(heads, np.sort(ins), side="right") - 1
                seg_len = np.bincount(seg, minlength=len(heads))
                bmax = defaultdict(int)
                for b, ln in zip(block_of(heads).tolist(), seg_len.tolist()):
                    bmax[b] = max(bmax[b], ln)
                for b, ln in bmax.items():
                    block_extra[b] += ln * c.shmem

    # global writes
    direct = kern.terminal.args["mode"] == "direct_store"
    for heads, yrows in run.outputs:
        if len(heads) == 0:
            continue
        ws = warp_of(heads)
        order = np.lexsort((yrows, ws))
        ws_s, rows_s = ws[order], yrows[order]
        uw, cnt = np.unique(ws_s, return_counts=True)
        if direct:
            cost = -(-cnt // WARP_SIZE) * c.store
        else:
            pair = np.stack([ws_s, rows_s])
            _, pc = np.unique(pair, axis=1, return_counts=True)
            pw = np.unique(pair, axis=1)[0]
            mult = np.zeros(len(uw))
            np.maximum.at(mult, np.searchsorted(uw, pw), pc)
            cost = (-(-cnt // WARP_SIZE) + mult - 1) * c.atom
        if "origin_rows" in kern.terminal.reads:
            cost = cost + -(-cnt // WARP_SIZE) * _array_cost(plan, kern, ["origin_rows"], c)
        for w, cc in zip(uw.tolist(), np.atleast_1d(cost).tolist()):
            warp_extra[w] += cc

    warp_time = defaultdict(float)
    for w, t in zip(wr_pwarp.tolist(), wr_time.tolist()):
        warp_time[w] += t
    for w, t in warp_extra.items():
        warp_time[w] += t

    wpb = kern.geometry.warps_per_block
    block_time = defaultdict(float)
    for w, t in warp_time.items():
        b = w // wpb
        block_time[b] = max(block_time[b], t)
    block_keys = [r for lp in kern.loops if lp.level != "bmt" for f in lp.meta for r in f.reads]
    meta = _array_cost(plan, kern, block_keys, c)
    times = [block_time[b] + block_extra[b] + meta + c.block for b in sorted(block_time)]

    slots = [0.0] * min(c.slots, len(times))
    heapq.heapify(slots)
    for t in times:
        heapq.heappush(slots, heapq.heappop(slots) + t)
    return max(slots) + c.launch


def estimate_seconds(plan, runs, costs: CostConstants = None) -> float:
    c = costs or DEFAULT_COSTS
    return sum(kernel_cycles(plan, r, c) for r in runs) / c.clock_hz
