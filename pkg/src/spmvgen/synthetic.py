"""Synthetic sparse matrix generators (all rows non-empty)."""

from __future__ import annotations

import numpy as np

from .matio import CooMatrix, from_triplets


def _from_rows(n_rows, n_cols, cols_per_row, rng, values=True):
    rows = np.repeat(np.arange(n_rows), [len(c) for c in cols_per_row])
    cols = np.concatenate(cols_per_row).astype(np.int64)
    vals = rng.uniform(-1.0, 1.0, len(cols)) if values else np.ones(len(cols))
    return from_triplets(n_rows, n_cols, rows, cols, vals)


def _sample_cols(rng, n_cols, k):
    return np.sort(rng.choice(n_cols, size=min(k, n_cols), replace=False))


def random_matrix(rng, max_dim=64, density=None) -> CooMatrix:
    """Random matrix up to ``max_dim`` square, density 1-30%, no empty rows."""
    n_rows = int(rng.integers(1, max_dim + 1))
    n_cols = int(rng.integers(1, max_dim + 1))
    density = float(rng.uniform(0.01, 0.30)) if density is None else density
    mask = rng.random((n_rows, n_cols)) < density
    empty = ~mask.any(axis=1)
    mask[np.flatnonzero(empty), rng.integers(0, n_cols, int(empty.sum()))] = True
    r, c = np.nonzero(mask)
    return from_triplets(n_rows, n_cols, r, c, rng.uniform(-1.0, 1.0, len(r)))


def uniform_rows(rng, n=1000, row_len=8, n_cols=None) -> CooMatrix:
    """Every row holds exactly ``row_len`` random columns (variance 0)."""
    n_cols = n_cols or n
    return _from_rows(n, n_cols, [_sample_cols(rng, n_cols, row_len) for _ in range(n)], rng)


def power_law_rows(rng, n=1000, alpha=1.6, max_len=None, n_cols=None) -> CooMatrix:
    """Row lengths drawn from a Zipf-like tail."""
    n_cols = n_cols or n
    max_len = max_len or n_cols // 2
    lengths = np.minimum(rng.zipf(alpha, n), max_len)
    return _from_rows(n, n_cols, [_sample_cols(rng, n_cols, int(k)) for k in lengths], rng)


def banded(rng, n=1000, half_width=4) -> CooMatrix:
    cols = [np.arange(max(0, i - half_width), min(n, i + half_width + 1)) for i in range(n)]
    return _from_rows(n, n, cols, rng)


def block_diagonal(rng, n=1000, block=16) -> CooMatrix:
    cols = [np.arange((i // block) * block, min(n, (i // block + 1) * block)) for i in range(n)]
    return _from_rows(n, n, cols, rng)


def erdos_renyi(rng, n=1000, avg_row_len=10) -> CooMatrix:
    lengths = np.maximum(1, rng.poisson(avg_row_len, n))
    return _from_rows(n, n, [_sample_cols(rng, n, int(k)) for k in lengths], rng)


def mixed_rows(rng, n=1000, short=4, long=200, long_frac=0.1) -> CooMatrix:
    """Mostly short rows followed by a band of long rows."""
    n_long = max(1, int(n * long_frac))
    lengths = [short] * (n - n_long) + [long] * n_long
    return _from_rows(n, n, [_sample_cols(rng, n, k) for k in lengths], rng)


GENERATORS = {
    "uniform": uniform_rows,
    "power_law": power_law_rows,
    "banded": banded,
    "block_diagonal": block_diagonal,
    "random": erdos_renyi,
    "mixed": mixed_rows,
}


def canonical_matrix() -> CooMatrix:
    """The 4x4 example used throughout the tests."""
    return from_triplets(4, 4, [0, 0, 1, 2, 2, 2, 3], [0, 2, 1, 0, 1, 3, 3],
                         [1, 2, 3, 4, 5, 6, 7])
