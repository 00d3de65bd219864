#!/usr/bin/env python3
"""Structures needed to reach the CSR floor, with and without the ban list."""

import argparse

import numpy as np

from spmvgen.matio import compute_stats
from spmvgen.search import SearchConfig, build_ban_list, count_structures, search
from spmvgen.synthetic import uniform_rows


def structures_to(m, target, prune, seed, cap):
    cfg = SearchConfig(seed=seed, prune=prune, seed_csr=False, max_structures=cap,
                       wall_clock_budget=600, sa={"t0": 0.3, "alpha": 0.9, "min_accept": 0.0})
    res = search(m, cfg, target_gflops=target)
    return res.reached_target_at or cap


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=256)
    ap.add_argument("--row-len", type=int, default=8)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--cap", type=int, default=400)
    ap.add_argument("--depth", type=int, default=6)
    args = ap.parse_args(argv)

    m = uniform_rows(np.random.default_rng(0), n=args.n, row_len=args.row_len)
    ban = build_ban_list(compute_stats(m))
    print(f"depth-{args.depth} structures: pruned {count_structures(args.depth, ban)}, "
          f"unpruned {count_structures(args.depth)}")
    floor = search(m, SearchConfig(seed=0, max_structures=0)).seed_gflops
    print(f"floor {floor:.4f} GFLOPS")
    for prune in (True, False):
        its = [structures_to(m, floor, prune, s, args.cap) for s in range(args.seeds)]
        print(f"prune={prune}: {its} median {np.median(its)}")


if __name__ == "__main__":
    main()
