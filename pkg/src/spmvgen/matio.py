"""Matrix Market ingestion, row statistics and the brute-force SpMV oracle."""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DimensionMismatch,
    DuplicateEntry,
    EmptyRow,
    IndexOutOfRange,
    MalformedHeader,
)

IRREGULAR_VARIANCE = 100.0

_FIELDS = ("real", "integer", "pattern")
_SYMMETRIES = ("general", "symmetric")


def _frozen(a, dtype):
    a = np.ascontiguousarray(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class CooMatrix:
    """Row-major sorted COO matrix with 0-based indices and no empty rows."""

    n_rows: int
    n_cols: int
    row_idx: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "row_idx", _frozen(self.row_idx, np.int64))
        object.__setattr__(self, "col_idx", _frozen(self.col_idx, np.int64))
        object.__setattr__(self, "values", _frozen(self.values, np.float64))

    @property
    def nnz(self) -> int:
        return int(self.values.shape[0])

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    def row_lengths(self) -> np.ndarray:
        return np.bincount(self.row_idx, minlength=self.n_rows)

    def todense(self) -> np.ndarray:
        d = np.zeros(self.shape)
        d[self.row_idx, self.col_idx] = self.values
        return d

    def inf_norm(self) -> float:
        """Max absolute row sum."""
        if self.nnz == 0:
            return 0.0
        return float(np.bincount(self.row_idx, weights=np.abs(self.values),
                                 minlength=self.n_rows).max())

    def __eq__(self, other):
        if not isinstance(other, CooMatrix):
            return NotImplemented
        return (self.shape == other.shape
                and np.array_equal(self.row_idx, other.row_idx)
                and np.array_equal(self.col_idx, other.col_idx)
                and np.array_equal(self.values, other.values))

    __hash__ = None


def from_triplets(n_rows, n_cols, rows, cols, values) -> CooMatrix:
    """Validate and sort raw 0-based triplets into a :class:`CooMatrix`."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    if not (rows.shape == cols.shape == values.shape):
        raise DimensionMismatch("row, col and value arrays differ in length")
    if n_rows < 1 or n_cols < 1:
        raise MalformedHeader(f"matrix dimensions must be positive, got {n_rows}x{n_cols}")
    bad = (rows < 0) | (rows >= n_rows) | (cols < 0) | (cols >= n_cols)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise IndexOutOfRange(
            f"entry ({rows[i] + 1}, {cols[i] + 1}) outside {n_rows}x{n_cols}")
    order = np.lexsort((cols, rows))
    rows, cols, values = rows[order], cols[order], values[order]
    if rows.size > 1:
        dup = (rows[1:] == rows[:-1]) & (cols[1:] == cols[:-1])
        if dup.any():
            i = int(np.flatnonzero(dup)[0])
            raise DuplicateEntry(f"duplicate entry ({rows[i] + 1}, {cols[i] + 1})")
    lengths = np.bincount(rows, minlength=n_rows)
    empty = np.flatnonzero(lengths == 0)
    if empty.size:
        raise EmptyRow(f"row {int(empty[0]) + 1} has no nonzeros "
                       f"({empty.size} empty rows in total)")
    return CooMatrix(int(n_rows), int(n_cols), rows, cols, values)


def parse_matrix_market(text) -> CooMatrix:
    """Parse a coordinate Matrix Market stream (``bytes`` or ``str``)."""
    if isinstance(text, (bytes, bytearray)):
        text = text.decode("ascii")
    lines = text.splitlines()
    if not lines:
        raise MalformedHeader("empty input")
    header = lines[0].strip().lower().split()
    if len(header) != 5 or header[0] != "%%matrixmarket" or header[1] != "matrix":
        raise MalformedHeader(f"bad banner: {lines[0]!r}")
    fmt, field, symmetry = header[2:]
    if fmt != "coordinate":
        raise MalformedHeader(f"only coordinate format is supported, got {fmt!r}")
    if field not in _FIELDS:
        raise MalformedHeader(f"unsupported field {field!r}")
    if symmetry not in _SYMMETRIES:
        raise MalformedHeader(f"unsupported symmetry {symmetry!r}")

    body = [ln for ln in lines[1:] if ln.strip() and not ln.lstrip().startswith("%")]
    if not body:
        raise MalformedHeader("missing size line")
    try:
        n_rows, n_cols, n_entries = (int(t) for t in body[0].split())
    except ValueError:
        raise MalformedHeader(f"bad size line: {body[0]!r}") from None
    entries = body[1:]
    if len(entries) != n_entries:
        raise MalformedHeader(f"size line announces {n_entries} entries, found {len(entries)}")

    ncol = 2 if field == "pattern" else 3
    if n_entries:
        try:
            table = np.loadtxt(io.StringIO("\n".join(entries)), ndmin=2,
                               usecols=range(ncol), dtype=np.float64)
        except ValueError as exc:
            raise MalformedHeader(f"bad entry line: {exc}") from None
    else:
        table = np.zeros((0, ncol))
    rows = table[:, 0].astype(np.int64) - 1
    cols = table[:, 1].astype(np.int64) - 1
    vals = np.ones(len(rows)) if field == "pattern" else table[:, 2].copy()

    if symmetry == "symmetric":
        if np.any(cols > rows):
            i = int(np.flatnonzero(cols > rows)[0])
            raise IndexOutOfRange(
                f"symmetric storage requires lower triangle, got ({rows[i] + 1}, {cols[i] + 1})")
        off = rows != cols
        rows, cols, vals = (np.concatenate([rows, cols[off]]),
                            np.concatenate([cols, rows[off]]),
                            np.concatenate([vals, vals[off]]))
    return from_triplets(n_rows, n_cols, rows, cols, vals)


def read_matrix_market(path) -> CooMatrix:
    return parse_matrix_market(Path(path).read_bytes())


def to_matrix_market(m: CooMatrix) -> str:
    out = ["%%MatrixMarket matrix coordinate real general",
           f"{m.n_rows} {m.n_cols} {m.nnz}"]
    out += [f"{r + 1} {c + 1} {v!r}" for r, c, v in
            zip(m.row_idx.tolist(), m.col_idx.tolist(), m.values.tolist())]
    return "\n".join(out) + "\n"


def write_matrix_market(m: CooMatrix, path):
    Path(path).write_text(to_matrix_market(m))


# .coo binary cache: magic, little-endian u64 n_rows/n_cols/nnz, then
# int64 rows, int64 cols, float64 values.
_COO_MAGIC = b"SPMVCOO1"


def write_coo_cache(m: CooMatrix, path):
    with open(path, "wb") as f:
        f.write(_COO_MAGIC)
        f.write(struct.pack("<QQQ", m.n_rows, m.n_cols, m.nnz))
        for a in (m.row_idx, m.col_idx):
            f.write(a.astype("<i8").tobytes())
        f.write(m.values.astype("<f8").tobytes())


def read_coo_cache(path) -> CooMatrix:
    raw = Path(path).read_bytes()
    if raw[:8] != _COO_MAGIC:
        raise MalformedHeader("not a .coo cache file")
    n_rows, n_cols, nnz = struct.unpack_from("<QQQ", raw, 8)
    off = 32
    rows = np.frombuffer(raw, "<i8", nnz, off)
    cols = np.frombuffer(raw, "<i8", nnz, off + 8 * nnz)
    vals = np.frombuffer(raw, "<f8", nnz, off + 16 * nnz)
    return from_triplets(n_rows, n_cols, rows, cols, vals)


@dataclass(frozen=True)
class MatrixStats:
    n_rows: int
    n_cols: int
    nnz: int
    avg_row_len: float
    row_len_variance: float
    max_row_len: int
    min_row_len: int

    @property
    def is_irregular(self) -> bool:
        return self.row_len_variance > IRREGULAR_VARIANCE

    def features(self):
        """Numeric feature vector used by the surrogate model."""
        return [np.log2(self.n_rows), np.log2(max(self.nnz, 1)), self.avg_row_len,
                np.log1p(self.row_len_variance), self.max_row_len]


def compute_stats(m: CooMatrix) -> MatrixStats:
    lengths = m.row_lengths()
    avg = m.nnz / m.n_rows
    var = float(np.sum((lengths - avg) ** 2) / m.n_rows)
    return MatrixStats(m.n_rows, m.n_cols, m.nnz, avg, var,
                       int(lengths.max()), int(lengths.min()))


def spmv_oracle(m: CooMatrix, x) -> np.ndarray:
    """Reference ``y = A x`` accumulated entry by entry in storage order."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (m.n_cols,):
        raise DimensionMismatch(f"x has shape {x.shape}, expected ({m.n_cols},)")
    y = np.zeros(m.n_rows)
    # ufunc.at is unbuffered and walks indices in order
    np.add.at(y, m.row_idx, m.values * x[m.col_idx])
    return y
