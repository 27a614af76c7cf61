import numpy as np
import pytest

from rml.boundary import (
    extract_lateral_trace,
    reduced_boundary_measure,
    solve_truncated_boundary,
)
from rml.grids import SpaceGrid, TimeGrid
from rml.measures import BoundaryMeasure, GridMeasure, boundary_total_mass, boundary_tv_distance
from rml.nonlinearity import NonlinearitySpec
from rml.pde import poisson_heat_potential
from rml.relaxation import TraceError

SG, TG = SpaceGrid(-1.0, 1.0, 199), TimeGrid(0.25, 400)
ZERO = NonlinearitySpec("zero")
P2 = NonlinearitySpec("power", p=2.0)
P4 = NonlinearitySpec("power", p=4.0)
EXP = NonlinearitySpec("exponential")
LADDER = tuple(float(4**j) for j in range(8))


def time_atom(t0, mass=1.0, endpoint="left"):
    return BoundaryMeasure(TG, {endpoint: GridMeasure.dirac(TG, t0, mass)})


def time_density(c=1.0, endpoint="left"):
    return BoundaryMeasure(TG, {endpoint: GridMeasure.uniform(TG, c)})


def test_zero_boundary_data_give_zero():
    f = solve_truncated_boundary(BoundaryMeasure(TG), P2.truncated(16.0), SG, TG)
    assert not np.any(f.values)


def test_without_absorption_matches_poisson_potential():
    bm = time_atom(0.1) + time_density(0.5, "right")
    u = solve_truncated_boundary(bm, ZERO, SG, TG)
    assert np.allclose(u.values, poisson_heat_potential(bm, SG, TG).values, atol=1e-12, rtol=0)


def test_solution_below_poisson_potential():
    bm = time_atom(0.1) + time_density(2.0, "right")
    u = solve_truncated_boundary(bm, P4.truncated(256.0), SG, TG)
    assert np.all(u.values <= poisson_heat_potential(bm, SG, TG).values)


def test_untruncated_boundary_solve_is_rejected():
    with pytest.raises(TraceError):
        solve_truncated_boundary(time_atom(0.1), P2, SG, TG)


def test_lateral_trace_of_time_atom():
    t0 = 0.1
    f = poisson_heat_potential(time_atom(t0), SG, TG)
    tr = extract_lateral_trace(f, "left", lambda t: (t >= t0).astype(float))
    assert abs(tr.value - 1.0) <= 0.03
    assert abs(extract_lateral_trace(f, "right", np.ones(TG.nt)).value) <= 0.03


def test_lateral_trace_of_constant_density():
    f = poisson_heat_potential(time_density(1.0), SG, TG)
    assert abs(extract_lateral_trace(f, "left", np.ones(TG.nt)).value - TG.T) <= 0.03 * TG.T


def test_lateral_trace_rejects_bad_endpoint():
    f = poisson_heat_potential(time_density(1.0), SG, TG)
    with pytest.raises(TraceError):
        extract_lateral_trace(f, "middle", np.ones(TG.nt))


@pytest.mark.parametrize("g", [ZERO, P2, P4, EXP, NonlinearitySpec("table", table=((1, 1), (2, 4), (4, 16)))])
def test_time_density_is_recovered(g):
    bm = BoundaryMeasure(TG, {"left": GridMeasure.gaussian(TG, 0.12, 0.04, 0.3), "right": GridMeasure.uniform(TG, 0.8)})
    r = reduced_boundary_measure(bm, g, LADDER, sg=SG)
    mass = boundary_total_mass(bm)
    assert boundary_tv_distance(r.limit_trace, bm) <= 0.03 * mass
    assert np.all(np.diff(r.shell_masses) <= 0)
    assert r.max_balance_residual <= 1e-10


def test_truncation_order_is_exact():
    bm = time_atom(0.05) + time_density(0.5, "right")
    lo = solve_truncated_boundary(bm, P4.truncated(16.0), SG, TG)
    hi = solve_truncated_boundary(bm, P4.truncated(256.0), SG, TG)
    assert np.all(hi.values <= lo.values)


def test_boundary_monotone_in_data():
    small = time_atom(0.1, 0.5) + time_density(0.3, "right")
    big = small + time_density(0.2)
    g = P2.truncated(64.0)
    assert np.all(solve_truncated_boundary(small, g, SG, TG).values <= solve_truncated_boundary(big, g, SG, TG).values)
