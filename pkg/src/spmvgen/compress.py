"""Model-driven format compression.

An integer format array is replaced by a closed-form model of its index
plus a handful of explicit patches.  Fitting is exact: a model is accepted
only if it reproduces every element once patches are applied.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .errors import OutOfBoundsRead

DEFAULT_PATCH_BUDGET = 8
PATCH_BYTES = 8
PERIODS = (2, 4, 8, 16) + tuple(range(32, 257, 32))
MODEL_KINDS = ("linear", "periodic_linear", "step")


@dataclass
class ArrayModel:
    """``linear``: k*i + b; ``periodic_linear``: k*(i % period) + b;
    ``step``: b + k*(i // period).  ``patches`` override single indices."""

    kind: str
    k: int
    b: int
    length: int
    period: int = 1
    patches: dict = field(default_factory=dict)

    def base(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        if self.kind == "linear":
            return self.k * idx + self.b
        if self.kind == "periodic_linear":
            return self.k * (idx % self.period) + self.b
        return self.b + self.k * (idx // self.period)

    def __call__(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= self.length):
            raise OutOfBoundsRead(f"model index outside [0, {self.length})")
        out = self.base(idx)
        for i, v in self.patches.items():
            out = np.where(idx == i, v, out)
        return out

    def expression(self, var="i"):
        if self.kind == "linear":
            e = f"{self.k}*{var}" if self.k != 1 else var
            if self.k == 0:
                e = ""
        elif self.kind == "periodic_linear":
            e = f"{self.k}*({var}%{self.period})"
        else:
            e = f"{self.k}*({var}/{self.period})"
        if self.b or not e:
            e = f"{e} + {self.b}" if e else str(self.b)
        return e

    def to_dict(self):
        return {"kind": self.kind, "k": self.k, "b": self.b, "length": self.length,
                "period": self.period,
                "patches": {str(i): v for i, v in sorted(self.patches.items())}}

    @classmethod
    def from_dict(cls, d):
        return cls(d["kind"], int(d["k"]), int(d["b"]), int(d["length"]), int(d["period"]),
                   {int(i): int(v) for i, v in d["patches"].items()})


def _candidates(a):
    n = len(a)
    pairs = [(0, 1), (1, 2), (n - 2, n - 1), (0, n - 1)]
    seen = set()
    for i, j in pairs:
        if not (0 <= i < j < n):
            continue
        dk = int(a[j] - a[i])
        if dk % (j - i):
            continue
        k = dk // (j - i)
        b = int(a[i]) - k * i
        if (k, b) not in seen:
            seen.add((k, b))
            yield ArrayModel("linear", k, b, n)
    k, b = int(a[1] - a[0]), int(a[0])
    for p in PERIODS:
        if 2 <= p < n:
            yield ArrayModel("periodic_linear", k, b, n, p)
    run = int(np.argmax(a != a[0])) if np.any(a != a[0]) else n
    if 2 <= run < n:
        yield ArrayModel("step", int(a[run] - a[0]), int(a[0]), n, run)


def fit_array_model(a, patch_budget=DEFAULT_PATCH_BUDGET):
    """Best exact model for integer array ``a`` or ``None``.

    Tries linear, periodic-linear and step hypotheses; the one needing the
    fewest patches wins (earlier hypothesis on ties).
    """
    a = np.asarray(a)
    if len(a) < 2 or not np.issubdtype(a.dtype, np.integer):
        return None
    a = a.astype(np.int64)
    idx = np.arange(len(a))
    best, best_bad = None, None
    for m in _candidates(a):
        bad = np.flatnonzero(m.base(idx) != a)
        if best_bad is None or len(bad) < len(best_bad):
            best, best_bad = m, bad
            if len(bad) == 0:
                break
    if best is None or len(best_bad) > patch_budget:
        return None
    best.patches = {int(i): int(a[i]) for i in best_bad}
    assert np.array_equal(best(idx), a)
    return best


def apply_compression(plan, fmt, patch_budget=DEFAULT_PATCH_BUDGET, exclude=("values",)):
    """Replace fittable format arrays by models; returns ``(plan', fmt')``."""
    from .formatgen import FormatBundle  # local: formatgen imports kernelgen

    plan = copy.deepcopy(plan)
    arrays, prov, models = {}, {}, {}
    for name, arr in fmt.arrays.items():
        base = name.rsplit(".", 1)[-1]
        m = None
        if base not in exclude and np.issubdtype(arr.dtype, np.integer):
            m = fit_array_model(arr, patch_budget)
        # a patch stores an index and a value; keep the array if that is no smaller
        if m is not None and PATCH_BYTES * len(m.patches) >= arr.nbytes:
            m = None
        if m is None:
            arrays[name] = arr
            prov[name] = fmt.provenance.get(name)
        else:
            models[name] = m
    plan.models.update(models)
    return plan, FormatBundle(arrays, prov)
