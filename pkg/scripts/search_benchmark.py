#!/usr/bin/env python3
"""Search every synthetic generator and compare the best design to the CSR seed."""

import argparse
import time

import numpy as np

from spmvgen.opgraph import describe
from spmvgen.search import SearchConfig, search
from spmvgen.synthetic import GENERATORS


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=1000, help="rows per matrix")
    ap.add_argument("--budget", type=float, default=60.0, help="seconds per search")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--matrices", nargs="*", default=sorted(GENERATORS))
    args = ap.parse_args(argv)

    print(f"{'matrix':<16}{'seed GF':>9}{'best GF':>9}{'gain':>7}{'structs':>9}{'secs':>7}  design")
    for name in args.matrices:
        m = GENERATORS[name](np.random.default_rng(args.seed), n=args.n)
        t0 = time.monotonic()
        res = search(m, SearchConfig(wall_clock_budget=args.budget, seed=args.seed))
        gain = res.best.gflops / res.seed_gflops if res.seed_gflops else float("nan")
        print(f"{name:<16}{res.seed_gflops:>9.3f}{res.best.gflops:>9.3f}{gain:>7.2f}"
              f"{res.structures:>9}{time.monotonic() - t0:>7.1f}  {describe(res.best.graph)}")


if __name__ == "__main__":
    main()
