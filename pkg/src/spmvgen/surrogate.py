"""Regression surrogate that interpolates measured GFLOPS between grid points."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.ensemble import GradientBoostingRegressor, RandomForestRegressor
from sklearn.tree import DecisionTreeRegressor

from .errors import TooFewSamples

MIN_SAMPLES = 8
KINDS = ("forest", "gbrt", "tree")


def encode(point, stats_features=()):
    """Feature vector: log2 of positive numeric params, raw otherwise, then stats."""
    out = []
    for v in point:
        v = float(v)
        out.append(np.log2(v) if v > 0 else v)
    return out + [float(s) for s in stats_features]


@dataclass
class Surrogate:
    """Fitted regressor (or nearest-neighbour fallback) with output clamping."""

    kind: str
    model: object
    X: np.ndarray
    y: np.ndarray
    upper: float

    def predict(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.kind == "nearest":
            d = ((X[:, None, :] - self.X[None, :, :]) ** 2).sum(axis=2)
            pred = self.y[np.argmin(d, axis=1)]
        else:
            pred = self.model.predict(X)
        return np.clip(pred, 0.0, self.upper)


def fit_surrogate(X, y, kind="forest", seed=0) -> Surrogate:
    """Fit on measured samples; raises :class:`TooFewSamples` below 8 of them."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if len(y) < MIN_SAMPLES:
        raise TooFewSamples(f"{len(y)} measured samples, need {MIN_SAMPLES}")
    if kind == "forest":
        # bootstrap resampling moves split points, which blends neighbouring grid cells
        model = RandomForestRegressor(n_estimators=100, max_features=1.0, random_state=seed)
    elif kind == "gbrt":
        model = GradientBoostingRegressor(n_estimators=150, max_depth=3, learning_rate=0.1,
                                          subsample=1.0, random_state=seed)
    elif kind == "tree":
        model = DecisionTreeRegressor(random_state=seed)
    else:
        raise ValueError(f"surrogate kind must be one of {KINDS}")
    model.fit(X, y)
    return Surrogate(kind, model, X, y, 1.5 * float(y.max()) if len(y) else 0.0)


def nearest_surrogate(X, y) -> Surrogate:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    return Surrogate("nearest", None, X, y, 1.5 * float(y.max()) if len(y) else 0.0)


def fit_or_fallback(X, y, kind="forest", seed=0) -> Surrogate:
    try:
        return fit_surrogate(X, y, kind, seed)
    except TooFewSamples:
        return nearest_surrogate(X, y)
