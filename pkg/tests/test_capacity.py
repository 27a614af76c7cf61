import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rml.capacity import (
    CapacityError,
    CapacityProblem,
    assemble,
    hausdorff_measure,
    lp_oracle,
    residual_from_psi,
    solve_capacity,
)
from rml.grids import SpaceGrid, TimeGrid

TINY_S, TINY_T = SpaceGrid(-1.0, 1.0, 15), TimeGrid(0.5, 16)


def tiny(K, kind="initial"):
    return CapacityProblem(kind, tuple(K), TINY_S, TINY_T, tol=1e-6)


def test_hausdorff_examples():
    assert hausdorff_measure([(-0.25, 0.25)]) == 0.5
    assert hausdorff_measure([]) == 0.0
    assert math.isclose(hausdorff_measure([(0.0, 0.2), (0.1, 0.3)]), 0.3)


def test_constraint_row_counts():
    sg = SpaceGrid(-1.0, 1.0, 399)
    one = CapacityProblem("initial", ((sg.nodes[199], sg.nodes[199]),), sg, TimeGrid(0.5, 10))
    assert assemble(one).n_constraints == 1
    assert assemble(CapacityProblem("initial", ((-0.25, 0.25),), sg, TimeGrid(0.5, 10))).n_constraints in (99, 100, 101)
    lat = CapacityProblem("lateral", ((0.1, 0.3),), SpaceGrid(-1.0, 1.0, 31), TimeGrid(0.5, 400))
    assert assemble(lat).n_constraints == 160


def test_invalid_problems():
    with pytest.raises(CapacityError):
        assemble(tiny([(0.01, 0.02)]))
    with pytest.raises(CapacityError):
        tiny([(-0.99, 0.0)])
    with pytest.raises(CapacityError):
        CapacityProblem("lateral", ((0.4, 0.6),), TINY_S, TINY_T)
    with pytest.raises(CapacityError):
        tiny([])


@pytest.mark.parametrize("K,kind", [([(-0.25, 0.25)], "initial"), ([(-0.5, -0.2), (0.3, 0.6)], "initial"), ([(0.1, 0.3)], "lateral")])
def test_solver_matches_lp_oracle(K, kind):
    p = tiny(K, kind)
    res = solve_capacity(p)
    assert res.converged
    assert abs(res.value - lp_oracle(p)) <= 1e-3 * max(1.0, res.value)


def test_certificate_reproduces_value():
    p = CapacityProblem("initial", ((-0.25, 0.25),), SpaceGrid(-1.0, 1.0, 31), TimeGrid(0.5, 32))
    res = solve_capacity(p)
    f = residual_from_psi(res.certificate_psi, p.sgrid, p.tgrid)
    assert math.isclose(np.abs(f).sum() * p.sgrid.dx * p.tgrid.dt, res.value, rel_tol=1e-8)
    assert res.constraint_violation <= 1e-6 and res.min_psi >= -1e-6


def test_single_point_capacity_shrinks_under_refinement():
    values = []
    for nx, nt in ((15, 16), (31, 64), (63, 256)):
        sg = SpaceGrid(-1.0, 1.0, nx)
        x0 = sg.nodes[nx // 2]
        values.append(solve_capacity(CapacityProblem("initial", ((x0, x0),), sg, TimeGrid(0.5, nt))).value)
    assert values[0] > values[1] > values[2]


span = st.tuples(st.floats(-0.75, 0.75), st.floats(0.0, 0.6)).map(lambda p: (p[0], min(p[0] + p[1], 0.75)))


@settings(max_examples=15)
@given(span, span)
def test_monotone_and_subadditive_in_K(a, b):
    try:
        ca, cb = lp_oracle(tiny([a])), lp_oracle(tiny([b]))
    except CapacityError:
        return  # an interval between two nodes carries no constraint
    both = lp_oracle(tiny([a, b]))
    assert max(ca, cb) <= both + 1e-6
    assert both <= ca + cb + 1e-6
