"""Command line entry point: ``spmvgen {design,run,verify}``.

Exit codes: 0 success, 1 unreadable input, 2 no feasible design,
3 oracle mismatch or out-of-bounds read, 4 fuzz verification failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import zlib
from pathlib import Path

import numpy as np

from .errors import (
    DeadEnd,
    DimensionMismatch,
    IngestionError,
    NoFeasibleDesign,
    OutOfBoundsRead,
    ParseError,
    SpmvgenError,
)
from .executor import benchmark, execute_plan
from .formatgen import FormatBundle
from .kernelgen import KernelPlan, emit_source
from .matio import (
    from_triplets,
    read_coo_cache,
    read_matrix_market,
    spmv_oracle,
    write_matrix_market,
)
from .opgraph import describe, parse_graph, serialize_graph

EXIT_OK, EXIT_INGEST, EXIT_NO_DESIGN, EXIT_MISMATCH, EXIT_VERIFY = 0, 1, 2, 3, 4


def load_matrix(path):
    p = Path(path)
    if not p.is_file():
        raise IngestionError(f"cannot read matrix file {path}")
    return read_coo_cache(p) if p.suffix == ".coo" else read_matrix_market(p)


def _err(msg):
    print(f"error: {msg}", file=sys.stderr)


# -- design -------------------------------------------------------------------

def cmd_design(args) -> int:
    from .config import Config, load_config, with_overrides
    from .designer import execute_graph
    from .search import search

    try:
        cfg = load_config(args.config) if args.config else Config()
        cfg = with_overrides(cfg, wall_clock_budget=args.budget_seconds, seed=args.seed,
                             precision=args.precision, workers=args.workers, out=args.out,
                             emit_kernel=args.emit_kernel, emit_format=args.emit_format)
        if args.dump_metadata:
            cfg = with_overrides(cfg, dump_metadata=True)
    except (ValueError, TypeError, OSError) as exc:
        _err(f"bad configuration: {exc}")
        return EXIT_INGEST
    try:
        m = load_matrix(args.matrix)
    except IngestionError as exc:
        _err(str(exc))
        return EXIT_INGEST

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        with open(out / "search.log.csv", "w", newline="") as log:
            res = search(m, cfg.search, log_stream=log)
    except (NoFeasibleDesign, DeadEnd) as exc:
        _err(str(exc))
        return EXIT_NO_DESIGN

    best = res.best
    (out / "best.graph.json").write_text(serialize_graph(best.graph, indent=2) + "\n")
    (out / "best.plan.json").write_text(best.plan.to_json() + "\n")
    best.fmt.save(out / "best.format")
    listing = emit_source(best.plan, best.fmt)
    (out / "best.kernel.txt").write_text(listing)
    if cfg.emit_kernel:
        Path(cfg.emit_kernel).write_text(listing)
    if cfg.emit_format:
        best.fmt.save(cfg.emit_format)
    if cfg.dump_metadata:
        (out / "metadata.txt").write_text(execute_graph(best.graph, m).dump() + "\n")
    print(f"best: {best.gflops:.4f} GFLOPS ({cfg.search.clock} clock), "
          f"{best.bytes} bytes, {res.structures} structures, stop={res.stop_reason}")
    print(f"design: {describe(best.graph)}")
    return EXIT_OK


# -- run ----------------------------------------------------------------------

def _load_design(graph_path, m, precision):
    from .search import compile_design

    g = parse_graph(Path(graph_path).read_text())
    base = Path(graph_path).parent
    plan_p, fmt_p = base / "best.plan.json", base / "best.format"
    if plan_p.is_file() and (fmt_p / "manifest.json").is_file():
        return g, KernelPlan.from_json(plan_p.read_text()), FormatBundle.load(fmt_p)
    plan, fmt = compile_design(g, m, precision)
    return g, plan, fmt


def cmd_run(args) -> int:
    try:
        m = load_matrix(args.matrix)
        x = np.ones(m.n_cols) if args.x is None else np.loadtxt(args.x, ndmin=1)
        if x.shape != (m.n_cols,):
            raise DimensionMismatch(f"x has {x.shape[0]} entries, matrix has {m.n_cols} columns")
        g, plan, fmt = _load_design(args.graph, m, args.precision)
    except (IngestionError, DimensionMismatch, ParseError, OSError, ValueError) as exc:
        _err(str(exc))
        return EXIT_INGEST
    except SpmvgenError as exc:
        _err(f"design does not apply to this matrix: {exc}")
        return EXIT_MISMATCH
    try:
        if (plan.n_rows, plan.n_cols) != m.shape:
            raise OutOfBoundsRead(f"plan is for {plan.n_rows}x{plan.n_cols}, matrix is "
                                  f"{m.n_rows}x{m.n_cols}")
        rep = benchmark(plan, fmt, x, reps=args.reps, clock=args.clock)
    except SpmvgenError as exc:
        _err(f"execution failed: {exc}")
        return EXIT_MISMATCH
    ref = spmv_oracle(m, x)
    err = float(np.abs(rep.y - ref).max()) if m.n_rows else 0.0
    scale = max(m.inf_norm() * float(np.abs(x).max()), 1e-300)
    tol = 1e-12 if plan.precision == "f64" else 1e-5
    crc = zlib.crc32(np.ascontiguousarray(rep.y, dtype=np.float64).tobytes())
    print(f"y checksum: {crc:08x}  sum={float(rep.y.sum()):.12g}")
    print(f"GFLOPS: {rep.gflops:.4f} ({rep.clock} clock)")
    print(f"oracle max-abs error: {err:.3e} (scaled {err / scale:.3e})")
    if err > tol * scale:
        _err("result does not match the oracle")
        return EXIT_MISMATCH
    return EXIT_OK


# -- verify -------------------------------------------------------------------

def _check(m, g, x, fault=False):
    """Return None when every execution mode matches the oracle, else a message."""
    from .search import compile_design, oracle_tolerance

    ref = spmv_oracle(m, x)
    tol = oracle_tolerance(m, x)
    for compress in (False, True):
        plan, fmt = compile_design(g, m, compress=compress)
        if fault:
            name = next(k for k in fmt.arrays if k.endswith("values"))
            bad = fmt.arrays[name].copy()
            bad[0] += 1.0
            fmt.arrays[name] = bad
        for mode in ("deterministic", "parallel"):
            try:
                y = execute_plan(plan, fmt, x, mode=mode)
            except SpmvgenError as exc:
                return f"{mode}/compress={compress}: {type(exc).__name__}: {exc}"
            err = float(np.abs(y - ref).max())
            if err > tol:
                return f"{mode}/compress={compress}: error {err:.3e} > {tol:.3e}"
    return None


def _minimize(m, g, x, fault):
    """Drop rows from the end while the failure persists and the design still applies."""
    from .designer import execute_graph

    while m.n_rows > 1:
        keep = m.row_idx < m.n_rows - 1
        sub = from_triplets(m.n_rows - 1, m.n_cols, m.row_idx[keep], m.col_idx[keep],
                            m.values[keep])
        try:
            execute_graph(g, sub)
            if _check(sub, g, x, fault) is None:
                break
        except SpmvgenError:
            break
        m = sub
    return m


def cmd_verify(args) -> int:
    from .search import random_design
    from .synthetic import random_matrix

    rng = np.random.default_rng(args.seed)
    for i in range(args.n):
        m = random_matrix(rng)
        x = rng.uniform(-1.0, 1.0, m.n_cols)
        g = random_design(rng, m)
        msg = _check(m, g, x, args.inject_fault)
        if msg is None:
            continue
        m = _minimize(m, g, x, args.inject_fault)
        d = Path(args.repro_dir) / f"case_{i}"
        d.mkdir(parents=True, exist_ok=True)
        write_matrix_market(m, d / "matrix.mtx")
        (d / "graph.json").write_text(serialize_graph(g, indent=2) + "\n")
        np.savetxt(d / "x.txt", x)
        (d / "failure.json").write_text(json.dumps(
            {"case": i, "seed": args.seed, "message": msg, "rows": m.n_rows}, indent=2) + "\n")
        _err(f"case {i} failed: {msg}; repro in {d}")
        return EXIT_VERIFY
    print(f"verified {args.n} random designs")
    return EXIT_OK


# -- entry --------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="spmvgen", description="SpMV format and kernel designer")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("design", help="search for the best design for a matrix")
    d.add_argument("matrix", help="Matrix Market (.mtx) or .coo cache file")
    d.add_argument("--config", help="JSON configuration file")
    d.add_argument("--budget-seconds", type=float, default=None)
    d.add_argument("--seed", type=int, default=None)
    d.add_argument("--precision", choices=("f32", "f64"), default=None)
    d.add_argument("--workers", type=int, default=None)
    d.add_argument("--out", default=None, help="output directory (default design_out)")
    d.add_argument("--dump-metadata", action="store_true")
    d.add_argument("--emit-kernel", metavar="FILE", default=None)
    d.add_argument("--emit-format", metavar="DIR", default=None)
    d.set_defaults(func=cmd_design)

    r = sub.add_parser("run", help="execute a saved design and check it against the oracle")
    r.add_argument("graph", help="best.graph.json written by design")
    r.add_argument("matrix")
    r.add_argument("--x", default=None, help="text file with one x value per line")
    r.add_argument("--precision", choices=("f32", "f64"), default="f64")
    r.add_argument("--reps", type=int, default=3)
    r.add_argument("--clock", choices=("model", "wall"), default="model")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="fuzz random designs against the oracle")
    v.add_argument("--n", type=int, default=200)
    v.add_argument("--seed", type=int, default=1)
    v.add_argument("--inject-fault", action="store_true",
                   help="corrupt one stored value to exercise the failure path")
    v.add_argument("--repro-dir", default="verify_repro")
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
