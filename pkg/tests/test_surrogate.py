import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spmvgen.errors import TooFewSamples
from spmvgen.search import DEFAULT_GRIDS, Knob, fine_refine, point_vector
from spmvgen.surrogate import KINDS, encode, fit_or_fallback, fit_surrogate, nearest_surrogate


def test_encode_uses_log2_for_positive_values():
    assert encode([64, 0, -2], [1.5]) == [6.0, 0.0, -2.0, 1.5]


def test_full_tree_reproduces_training_set():
    X = [[float(i), float(i % 3)] for i in range(12)]
    y = np.arange(12.0) ** 2
    model = fit_surrogate(X, y, kind="tree")
    assert np.abs(model.predict(X) - y).mean() == 0.0


@pytest.mark.parametrize("kind", KINDS)
def test_predictions_are_piecewise_constant(kind):
    # no training value lies strictly between 2 and 3, so neither does any split
    X = [[float(i)] for i in range(10)]
    model = fit_surrogate(X, np.sin(np.arange(10.0)) + 2, kind=kind)
    pred = model.predict([[2.1], [2.3], [2.49]])
    assert np.ptp(pred) == 0.0


def test_too_few_samples():
    with pytest.raises(TooFewSamples):
        fit_surrogate([[1.0]] * 7, [1.0] * 7)


def test_three_records_fall_back_to_nearest_neighbour():
    model = fit_or_fallback([[0.0], [5.0], [10.0]], [1.0, 2.0, 3.0])
    assert model.kind == "nearest"
    assert model.predict([[1.0], [6.0], [9.0]]).tolist() == [1.0, 2.0, 3.0]


def test_unknown_kind():
    with pytest.raises(ValueError):
        fit_surrogate([[float(i)] for i in range(8)], np.ones(8), kind="svm")


def test_clamped_to_one_and_a_half_max():
    s = nearest_surrogate([[0.0]], [2.0])
    s.model, s.kind = type("M", (), {"predict": lambda self, X: np.array([100.0, -3.0])})(), "x"
    assert s.predict([[0.0], [1.0]]).tolist() == [3.0, 0.0]


def test_refinement_on_tent_function():
    knob = Knob(1, "threads_per_block", (32, 64, 128, 256, 512, 1024))
    f = lambda p: 100 - abs(p - 128)  # noqa: E731
    X = [encode(point_vector([knob], (v,))) for v in knob.values]
    y = [f(v) for v in knob.values]
    model = fit_or_fallback(X, y, seed=0)
    best = max(knob.values, key=f)
    ((top,),) = fine_refine(model, [knob], (best,), k=1, measured=[(v,) for v in knob.values])
    # one coarse cell either side of 128
    assert 64 <= top <= 256


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0.0, 1e3), min_size=8, max_size=30), st.integers(0, 1000))
def test_predictions_stay_in_range(ys, seed):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 10, (len(ys), 3))
    model = fit_surrogate(X, ys, seed=seed)
    pred = model.predict(rng.uniform(-5, 15, (20, 3)))
    assert (pred >= 0).all() and (pred <= 1.5 * max(ys) + 1e-9).all()


def test_default_grid_keys_are_known():
    assert {"threads_per_block", "rows_per_block"} <= set(DEFAULT_GRIDS)
