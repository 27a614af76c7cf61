import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rml.nonlinearity import NonlinearityError, NonlinearitySpec, g_eval, implicit_reaction_solve

P2 = NonlinearitySpec("power", p=2.0)
P4 = NonlinearitySpec("power", p=4.0)
EXP = NonlinearitySpec("exponential", a=1.0)
TAB = NonlinearitySpec("table", table=((0.0, 0.0), (1.0, 1.0), (2.0, 4.0)))
CATALOGUE = [P2, P4, EXP, TAB, NonlinearitySpec("power", p=1.5, c=3.0)]


def test_g_eval_examples():
    assert g_eval(P2, 3.0) == 9.0
    assert g_eval(P4.truncated(10.0), 3.0) == 10.0
    assert g_eval(EXP, 0.0) == 0.0


def test_reaction_solve_examples():
    # root of v + 0.1 v^2 = 1
    assert math.isclose(implicit_reaction_solve(P2, 0.1, 1.0), 0.916080, abs_tol=5e-7)
    assert implicit_reaction_solve(NonlinearitySpec("zero"), 0.3, 0.7) == 0.7
    assert math.isclose(implicit_reaction_solve(P2.truncated(0.5), 0.1, 1.0), 0.95, rel_tol=1e-13)


def test_invalid_specs():
    for kw in ({"kind": "cubic"}, {"kind": "power", "p": 1.0}, {"kind": "exponential", "a": 0.0}, {"kind": "power", "k": 0.0}):
        with pytest.raises(NonlinearityError):
            NonlinearitySpec(**kw)
    with pytest.raises(NonlinearityError):
        NonlinearitySpec("table", table=((0.0, 0.0), (1.0, 2.0), (2.0, 1.0)))


def test_table_extends_with_last_slope():
    assert math.isclose(TAB(3.0), 7.0)


@given(st.sampled_from(CATALOGUE), st.lists(st.floats(-50, 50), min_size=2, max_size=20))
def test_g_nondecreasing_and_zero_on_negatives(g, r):
    r = np.sort(np.array(r))
    v = g(r)
    assert np.all(np.diff(v) >= 0)
    assert np.all(v[r <= 0] == 0)


@given(st.sampled_from(CATALOGUE), st.floats(0.01, 1e6), st.floats(0.01, 1e6), st.floats(0, 30))
def test_truncation_order(g, k1, k2, r):
    lo, hi = sorted((k1, k2))
    assert g.truncated(lo)(r) <= g.truncated(hi)(r) <= g(r)
    assert g.truncated(lo)(r) <= lo


@given(
    st.sampled_from(CATALOGUE),
    st.sampled_from([1.0, 16.0, math.inf]),
    st.floats(1e-4, 1.0),
    st.lists(st.floats(-10, 1e3), min_size=2, max_size=30),
)
def test_reaction_solve_monotone_with_small_residual(g, k, dt, w):
    g = g.truncated(k)
    w = np.sort(np.array(w))
    v = implicit_reaction_solve(g, dt, w)
    assert np.all(np.diff(v) >= 0)
    assert np.all(np.abs(v + dt * g(v) - w) <= 1e-12 * np.maximum(1.0, np.abs(w)))


@given(
    st.sampled_from(CATALOGUE),
    st.floats(0.5, 1e4),
    st.floats(1.0, 64.0),
    st.floats(1e-5, 1e-1),
    st.lists(st.floats(0.0, 1e3), min_size=1, max_size=30),
)
def test_reaction_solve_exactly_ordered_in_k(g, k, factor, dt, w):
    w = np.array(w)
    lo = implicit_reaction_solve(g.truncated(k), dt, w)
    hi = implicit_reaction_solve(g.truncated(k * factor), dt, w)
    assert np.all(hi <= lo)
    assert np.all(lo <= w)
