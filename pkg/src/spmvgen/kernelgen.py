"""Kernel plans: a skeleton of nested block/warp/thread loops with fragments.

One :class:`Kernel` is built per metadata namespace.  Fragments name the
format arrays they read, so the format is simply the union of those reads
(see :func:`spmvgen.formatgen.required_keys`).  The executor interprets a
plan fragment by fragment and fetches arrays only by the names listed here.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .compress import ArrayModel
from .designer import MetadataSet, Namespace, partial_layout
from .errors import MissingResource, NoAdapterRule
from .opgraph import LEVELS, WARP_SIZE, OperatorGraph, OperatorKind

K = OperatorKind

DEFAULT_THREADS_PER_BLOCK = 128

# fragment ops understood by the executor
FRAGMENT_OPS = frozenset({
    # distribution
    "bmtb_children", "bmw_children", "bmt_range", "bmt_range_padded",
    # computation
    "mac",
    # rows
    "entry_rows", "unit_rows",
    # reductions
    "THREAD_TOTAL_RED", "THREAD_BITMAP_RED", "WARP_TOTAL_RED", "WARP_BITMAP_RED",
    "WARP_SEG_RED", "SHMEM_TOTAL_RED", "SHMEM_OFFSET_RED",
    # output
    "gmem_write",
})

# storage class produced / expected by reduction stages
PRODUCES = {
    None: "register",
    "THREAD_TOTAL_RED": "register", "THREAD_BITMAP_RED": "register",
    "WARP_TOTAL_RED": "lane0", "WARP_SEG_RED": "segment_tails",
    "WARP_BITMAP_RED": "segment_tails",
    "SHMEM_TOTAL_RED": "register", "SHMEM_OFFSET_RED": "register",
}
CONSUMES = {
    "THREAD_TOTAL_RED": {"register"}, "THREAD_BITMAP_RED": {"register"},
    "WARP_TOTAL_RED": {"register"}, "WARP_SEG_RED": {"register"},
    "WARP_BITMAP_RED": {"register"},
    "SHMEM_TOTAL_RED": {"scratch"}, "SHMEM_OFFSET_RED": {"scratch"},
    "gmem_write": {"register", "lane0", "segment_tails"},
}
ADAPTER_RULES = {
    ("register", "scratch"): "reg_to_scratch",
    ("lane0", "scratch"): "lane0_to_scratch",
    ("segment_tails", "scratch"): "segtail_to_scratch",
}


@dataclass
class Fragment:
    op: str
    reads: list = field(default_factory=list)
    args: dict = field(default_factory=dict)


@dataclass
class Adapter:
    name: str
    src: str
    dst: str


@dataclass
class LaunchGeometry:
    grid_blocks: int
    threads_per_block: int
    warp_size: int = WARP_SIZE

    def __post_init__(self):
        if not (32 <= self.threads_per_block <= 1024) or self.threads_per_block % self.warp_size:
            raise MissingResource(
                f"threads_per_block={self.threads_per_block} is not a multiple of 32 in [32, 1024]")

    @property
    def warps_per_block(self):
        return self.threads_per_block // self.warp_size


@dataclass
class Loop:
    level: str                  # 'bmtb' | 'bmw' | 'bmt'
    blocking: str               # 'row' | 'nnz'
    size: int
    n_units: int
    meta: list = field(default_factory=list)
    reduce: Fragment = None
    adapters: list = field(default_factory=list)
    single_iteration: bool = False


@dataclass
class Kernel:
    namespace: int
    prefix: str
    n_rows: int
    n_entries: int
    real_nnz: int
    geometry: LaunchGeometry
    loops: list
    entry: list                 # fragments run per nonzero: mac [+ entry_rows]
    terminal: Fragment
    terminal_adapters: list = field(default_factory=list)

    def loop(self, level):
        for lp in self.loops:
            if lp.level == level:
                return lp
        return None

    def fragments(self):
        """All fragments in first-use order."""
        out = []
        for lp in self.loops:
            out += lp.meta
        out += self.entry
        for level in ("bmt", "bmw", "bmtb"):
            lp = self.loop(level)
            if lp is not None and lp.reduce is not None:
                out.append(lp.reduce)
        out.append(self.terminal)
        return out

    def key(self, name):
        return self.prefix + name


@dataclass
class KernelPlan:
    kernels: list
    n_rows: int
    n_cols: int
    precision: str = "f64"
    models: dict = field(default_factory=dict)   # qualified array name -> ArrayModel

    @property
    def effective_nnz(self):
        return sum(k.real_nnz for k in self.kernels)

    def to_dict(self):
        d = asdict(self)
        d["models"] = {k: m.to_dict() for k, m in sorted(self.models.items())}
        return d

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        kernels = []
        for kd in d["kernels"]:
            loops = []
            for ld in kd["loops"]:
                ld = dict(ld)
                ld["meta"] = [Fragment(**f) for f in ld["meta"]]
                ld["reduce"] = Fragment(**ld["reduce"]) if ld["reduce"] else None
                ld["adapters"] = [Adapter(**a) for a in ld["adapters"]]
                loops.append(Loop(**ld))
            kd = dict(kd)
            kd["geometry"] = LaunchGeometry(**kd["geometry"])
            kd["loops"] = loops
            kd["entry"] = [Fragment(**f) for f in kd["entry"]]
            kd["terminal"] = Fragment(**kd["terminal"])
            kd["terminal_adapters"] = [Adapter(**a) for a in kd["terminal_adapters"]]
            kernels.append(Kernel(**kd))
        return cls(kernels, d["n_rows"], d["n_cols"], d.get("precision", "f64"),
                   {k: ArrayModel.from_dict(m) for k, m in d.get("models", {}).items()})

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


# -- plan construction -------------------------------------------------------

def _unit_row_fragment(ns: Namespace, level):
    """How to find the first row of a block at ``level``."""
    how, size, _ = ns.levels[level]
    coarser = [lvl for lvl in LEVELS[:LEVELS.index(level)] if lvl in ns.levels]
    if how == "row" and size == 1 and not coarser:
        return Fragment("unit_rows", [], {"level": level, "source": "identity"})
    key = f"{level}_row_offsets" if how == "row" else f"first_row_of_{level}"
    return Fragment("unit_rows", [key], {"level": level, "source": key})


def _entry_row_fragment(ns: Namespace):
    for level in reversed(LEVELS):
        if level in ns.levels and ns.levels[level][0] == "row" and ns.levels[level][1] == 1:
            f = _unit_row_fragment(ns, level)
            return Fragment("entry_rows", f.reads, dict(f.args))
    return Fragment("entry_rows", ["row_indices"], {"level": None, "source": "row_indices"})


def _reduce_fragment(ns, level, kind, emit_rows):
    reads, args = [], {"level": level, "emit_rows": emit_rows}
    name = kind.value
    row_frag = _unit_row_fragment(ns, level)
    if name == "THREAD_BITMAP_RED":
        reads = ["row_bitmap"] + (row_frag.reads if emit_rows else [])
    elif name == "WARP_BITMAP_RED":
        reads = ["warp_red_bitmap"] + (row_frag.reads if emit_rows else [])
    elif name == "SHMEM_OFFSET_RED":
        reads = ["reduce_row_offsets"]
        if ns.levels["bmtb"][0] == "row":
            reads.append("bmtb_row_offsets")
        else:
            reads.append("reduce_slice_starts")
            if emit_rows:
                reads.append("first_row_of_bmtb")
    elif name.endswith("TOTAL_RED"):
        reads = list(row_frag.reads) if emit_rows else []
    if emit_rows or name == "SHMEM_OFFSET_RED":
        args["source"] = row_frag.args["source"]
    return Fragment(name, reads, args)


def build_kernel(ns: Namespace, prefix="", default_tpb=DEFAULT_THREADS_PER_BLOCK,
                 exclusive_rows=True) -> Kernel:
    tpb = ns.resources if ns.resources is not None else default_tpb
    if tpb is None:
        raise MissingResource(f"namespace {ns.id}: no SET_RESOURCES and no default")
    present = [lvl for lvl in LEVELS if lvl in ns.levels]
    units = {lvl: ns.n_blocks(lvl) for lvl in present}
    wpb = tpb // WARP_SIZE
    if "bmtb" in units:
        grid = units["bmtb"]
    elif "bmw" in units:
        grid = -(-units["bmw"] // wpb)
    elif "bmt" in units:
        grid = -(-units["bmt"] // tpb)
    else:
        grid = -(-ns.n_entries // tpb)
    geometry = LaunchGeometry(max(grid, 1), tpb)

    # which producer must materialise rows: the last one before a row consumer
    stages = [None] + [lvl for lvl in ("bmt", "bmw", "bmtb") if lvl in ns.impl]
    need_rows = {}
    pending = None   # last producer whose rows are not yet known
    for st in stages:
        kind = ns.impl.get(st) if st else None
        if kind is K.WARP_SEG_RED:
            need_rows[pending] = True
        pending = st
    need_rows[pending] = True   # terminal

    loops = []
    for lvl in present:
        how, size, _ = ns.levels[lvl]
        lp = Loop(lvl, how, size, units[lvl])
        finer = [f for f in present if LEVELS.index(f) > LEVELS.index(lvl)]
        padded = ns.padded and "bmtb" in present and "bmt" in present
        if lvl == "bmtb":
            child = finer[0] if finer else None
            reads = []
            if padded:
                reads.append("bmtb_nz_offsets")
            reads.append(f"bmtb_{child}_offsets" if child else "bmtb_nz_offsets")
            lp.meta.append(Fragment("bmtb_children", list(dict.fromkeys(reads)),
                                    {"child": child or "entry"}))
            if child is None:
                lp.single_iteration = bool(np.all(np.diff(ns.offsets("bmtb")) <= tpb))
            else:
                lp.single_iteration = bool(
                    np.all(np.diff(ns[f"bmtb_{child}_offsets"]) <= (wpb if child == "bmw" else tpb)))
        elif lvl == "bmw":
            child = "bmt" if "bmt" in present else None
            lp.meta.append(Fragment("bmw_children",
                                    [f"bmw_{child}_offsets" if child else "bmw_nz_offsets"],
                                    {"child": child or "entry"}))
            counts = np.diff(ns["bmw_bmt_offsets"]) if child else np.diff(ns.offsets("bmw"))
            lp.single_iteration = bool(np.all(counts <= WARP_SIZE))
        else:
            if padded:
                lp.meta.append(Fragment("bmt_range_padded", ["bmt_sizes_of_bmtb"], {}))
            else:
                lp.meta.append(Fragment("bmt_range", ["bmt_nz_offsets"], {}))
        kind = ns.impl.get(lvl)
        if kind is not None:
            lp.reduce = _reduce_fragment(ns, lvl, kind, need_rows.get(lvl, False))
        loops.append(lp)

    entry = [Fragment("mac", ["col_indices", "values"], {})]
    if need_rows.get(None):
        entry.append(_entry_row_fragment(ns))

    final = partial_layout(ns)
    unique = len(np.unique(final.rows)) == len(final.rows)
    reads = ["origin_rows"] if "origin_rows" in ns else []
    terminal = Fragment("gmem_write", reads,
                        {"mode": "atomic_add", "exclusive": bool(unique and exclusive_rows)})
    return Kernel(ns.id, prefix, ns.n_rows, ns.n_entries, ns.real_nnz(), geometry, loops,
                  entry, terminal)


def build_plan(g: OperatorGraph, ms: MetadataSet, default_tpb=DEFAULT_THREADS_PER_BLOCK,
               precision="f64") -> KernelPlan:
    """Assemble one kernel per namespace and insert adapters."""
    multi = len(ms) > 1
    # direct stores are safe only when no two namespaces own the same row
    seen, exclusive = set(), True
    for ns in ms:
        rows = set(ns.origin.tolist())
        if rows & seen:
            exclusive = False
        seen |= rows
    kernels = [build_kernel(ns, f"p{ns.id}." if multi else "", default_tpb, exclusive)
               for ns in ms]
    plan = KernelPlan(kernels, ms.matrix.n_rows, ms.matrix.n_cols, precision)
    return insert_adapters(plan)


def optimize_plan(plan: KernelPlan) -> KernelPlan:
    """Turn atomic adds into plain stores where every output row is written once."""
    for kern in plan.kernels:
        if kern.terminal.args.get("exclusive"):
            kern.terminal.args["mode"] = "direct_store"
    return plan


def insert_adapters(plan: KernelPlan) -> KernelPlan:
    """Interpose storage-transfer fragments between mismatched stages (idempotent)."""
    for kern in plan.kernels:
        produced = PRODUCES[None]
        for level in ("bmt", "bmw", "bmtb"):
            lp = kern.loop(level)
            if lp is None or lp.reduce is None:
                continue
            produced = _connect(produced, lp.reduce.op, lp.adapters)
        _connect(produced, "gmem_write", kern.terminal_adapters)
    return plan


def _connect(produced, consumer, adapters):
    accepted = CONSUMES[consumer]
    if produced not in accepted:
        target = sorted(accepted)[0]
        name = ADAPTER_RULES.get((produced, target))
        if name is None:
            raise NoAdapterRule(f"no adapter from {produced} to {consumer}")
        if not any(a.name == name for a in adapters):
            adapters.append(Adapter(name, produced, target))
    return PRODUCES.get(consumer, "register")


# -- documentary listing -----------------------------------------------------

def emit_source(plan: KernelPlan, fmt=None) -> str:
    """Deterministic pseudo-C rendering of the plan (not compilable)."""
    vt = "float" if plan.precision == "f32" else "double"
    lines = [f"// SpMV plan: {plan.n_rows}x{plan.n_cols}, {len(plan.kernels)} kernel(s)"]
    for kern in plan.kernels:
        arrays = []
        for f in kern.fragments():
            for r in f.reads:
                name = kern.key(r)
                if name not in plan.models and name not in arrays:
                    arrays.append(name)
        params = ", ".join(
            [f"const {vt} *{_c(a)}" if a.endswith("values") else f"const int *{_c(a)}"
             for a in arrays] + [f"const {vt} *x", f"{vt} *y"])
        g = kern.geometry
        lines.append("")
        lines.append(f"// grid={g.grid_blocks} block={g.threads_per_block}")
        lines.append(f"__global__ void spmv_p{kern.namespace}({params}) {{")
        ind = "  "
        for lp in kern.loops:
            for f in lp.meta:
                for r in f.reads:
                    lines.append(ind + _read(plan, kern, r, lp.level))
            if lp.single_iteration or lp.level == "bmtb":
                lines.append(ind + f"{{ // {lp.level.upper()} ({lp.blocking} blocks of {lp.size})")
            else:
                lines.append(ind + f"for (int {lp.level} = ...; ; ) {{ "
                             f"// {lp.level.upper()} ({lp.blocking} blocks of {lp.size})")
            ind += "  "
        lines.append(ind + f"{vt} temp_result = 0;")
        lines.append(ind + "for (int i = nz_begin; i < nz_end; i++)")
        lines.append(ind + f"  temp_result += {_elem(plan, kern, 'values')} * "
                     f"x[{_elem(plan, kern, 'col_indices')}];")
        for f in kern.entry[1:]:
            for r in f.reads:
                lines.append(ind + _read(plan, kern, r, "i"))
        for lp in reversed(kern.loops):
            ind = ind[:-2]
            for a in lp.adapters:
                lines.append(ind + f"  // adapter {a.name}: {a.src} -> {a.dst}")
                lines.append(ind + "  scratch[threadIdx.x] = temp_result; __syncthreads();")
            if lp.reduce is not None:
                for r in lp.reduce.reads:
                    lines.append(ind + "  " + _read(plan, kern, r, lp.level))
                lines.append(ind + f"  reduce_{lp.reduce.op.lower()}(temp_result);")
            lines.append(ind + "}")
        for r in kern.terminal.reads:
            lines.append(ind + _read(plan, kern, r, "row"))
        if kern.terminal.args["mode"] == "atomic_add":
            lines.append(ind + "atomicAdd(&y[row], temp_result);")
        else:
            lines.append(ind + "y[row] = temp_result;")
        lines.append("}")
    return "\n".join(lines) + "\n"


def _c(name):
    return name.replace(".", "_")


def _read(plan, kern, key, idx):
    name = kern.key(key)
    var = {"bmtb": "bid", "bmw": "wid", "bmt": "tid"}.get(idx, idx)
    if name in plan.models:
        m = plan.models[name]
        s = f"int {_c(key)}_v = {m.expression(var)};"
        for i, v in sorted(m.patches.items()):
            s += f" if ({var} == {i}) {_c(key)}_v = {v};"
        return s
    return f"int {_c(key)}_v = {_c(name)}[{var}];"


def _elem(plan, kern, key):
    name = kern.key(key)
    if name in plan.models:
        return f"({plan.models[name].expression('i')})"
    return f"{_c(name)}[i]"
