#!/usr/bin/env python3
"""Run the acceptance checks and print their PASS/FAIL lines."""

import argparse
import sys

import pytest


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("-k", default=None, help="pytest keyword filter, e.g. 'fuzz or canonical'")
    args = ap.parse_args(argv)
    opts = ["tests/test_acceptance.py", "-q", "-s"]
    if args.k:
        opts += ["-k", args.k]
    return pytest.main(opts)


if __name__ == "__main__":
    sys.exit(main())
