import secrets

import numpy as np
import pytest
from conftest import CANONICAL_GRAPHS
from hypothesis import given, settings
from hypothesis import strategies as st

from spmvgen.compress import ArrayModel, apply_compression, fit_array_model
from spmvgen.designer import execute_graph
from spmvgen.errors import OutOfBoundsRead
from spmvgen.formatgen import build_format, required_keys
from spmvgen.kernelgen import build_plan, emit_source


def test_linear_without_patches():
    m = fit_array_model(np.array([0, 64, 128, 192]))
    assert (m.kind, m.k, m.b, m.patches) == ("linear", 64, 0, {})


def test_single_outlier_becomes_one_patch():
    m = fit_array_model(np.array([0, 64, 999, 192]))
    assert (m.kind, m.k, m.b) == ("linear", 64, 0)
    assert m.patches == {2: 999}


def test_random_array_has_no_model():
    a = np.frombuffer(secrets.token_bytes(64 * 4), dtype=np.uint32).astype(np.int64)
    assert fit_array_model(a) is None


@pytest.mark.parametrize("a,kind,period", [
    ([5, 5, 5, 5], "linear", 1),
    ([0, 1, 0, 1, 0, 1], "periodic_linear", 2),
    ([0, 0, 0, 4, 4, 4, 8, 8, 8], "step", 3),
])
def test_model_kinds(a, kind, period):
    m = fit_array_model(np.array(a))
    assert (m.kind, m.period) == (kind, period)
    assert m(np.arange(len(a))).tolist() == a


def test_patch_budget_is_respected():
    a = np.arange(20) * 3
    a[[1, 5, 9]] = -1
    assert fit_array_model(a, patch_budget=2) is None
    assert len(fit_array_model(a, patch_budget=3).patches) == 3


def test_non_integer_and_short_arrays_are_not_modelled():
    assert fit_array_model(np.array([0.0, 1.0, 2.0])) is None
    assert fit_array_model(np.array([4])) is None


def test_model_bounds_are_checked():
    m = ArrayModel("linear", 2, 0, 4)
    with pytest.raises(OutOfBoundsRead):
        m(np.array([4]))


@pytest.mark.parametrize("model,expr", [
    (ArrayModel("linear", 64, 0, 4), "64*bid"),
    (ArrayModel("linear", 1, 3, 4), "bid + 3"),
    (ArrayModel("linear", 0, 7, 4), "7"),
    (ArrayModel("periodic_linear", 2, 0, 8, 4), "2*(bid%4)"),
    (ArrayModel("step", 4, 1, 9, 3), "4*(bid/3) + 1"),
])
def test_expressions(model, expr):
    assert model.expression("bid") == expr


def test_round_trip_dict():
    m = fit_array_model(np.array([0, 64, 999, 192]))
    assert ArrayModel.from_dict(m.to_dict()) == m


def test_ell_offsets_are_dropped(A):
    g = CANONICAL_GRAPHS["ell"]()
    ms = execute_graph(g, A)
    plan = build_plan(g, ms)
    fmt = build_format(ms, required_keys(plan))
    plan2, fmt2 = apply_compression(plan, fmt)
    m = plan2.models["bmt_nz_offsets"]
    assert (m.kind, m.k, m.b) == ("linear", 3, 0)
    assert "bmt_nz_offsets" not in fmt2
    assert fmt.total_bytes - fmt2.total_bytes == 5 * 4
    assert required_keys(plan2) == ["col_indices", "values"]
    assert "3*tid" in emit_source(plan2, fmt2)
    # the original plan is untouched
    assert plan.models == {}


def test_values_are_never_modelled(A):
    g = CANONICAL_GRAPHS["csr_scalar"]()
    ms = execute_graph(g, A)
    plan = build_plan(g, ms)
    plan2, fmt2 = apply_compression(plan, build_format(ms, required_keys(plan)))
    assert "values" in fmt2


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(-1000, 1000), min_size=2, max_size=64))
def test_fitted_models_are_exact(values):
    a = np.array(values, dtype=np.int64)
    m = fit_array_model(a)
    if m is not None:
        assert np.array_equal(m(np.arange(len(a))), a)
        assert len(m.patches) <= 8


@settings(max_examples=50, deadline=None)
@given(st.integers(-50, 50), st.integers(-1000, 1000), st.integers(2, 200))
def test_affine_arrays_always_fit(k, b, n):
    a = k * np.arange(n) + b
    m = fit_array_model(a)
    assert m is not None and m.patches == {}
