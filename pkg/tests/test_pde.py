import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rml.grids import SpaceGrid, TimeGrid
from rml.measures import BoundaryMeasure, GridMeasure
from rml.nonlinearity import NonlinearitySpec
from rml.pde import (
    deposit,
    exact_heat_potential,
    heat_potential,
    mass_balance,
    poisson_heat_potential,
    potential_integrability,
    solve_truncated,
)
from rml.relaxation import is_subsolution

SG = SpaceGrid(-1.0, 1.0, 99)
TG = TimeGrid(0.25, 200)
P2 = NonlinearitySpec("power", p=2.0)
P4 = NonlinearitySpec("power", p=4.0)
EXP = NonlinearitySpec("exponential", a=1.0)


def test_deposit_examples():
    x = SG.nodes[40]
    u = deposit(GridMeasure.dirac(SG, x, 2.0), SG)
    assert math.isclose(u[40], 2.0 / SG.dx) and np.count_nonzero(u) == 1
    mid = 0.5 * (SG.nodes[40] + SG.nodes[41])
    u = deposit(GridMeasure.dirac(SG, mid), SG)
    assert np.allclose(u[40:42], 0.5 / SG.dx)
    u = deposit(GridMeasure.uniform(SG, 0.5), SG)
    assert np.allclose(u, 0.5) and math.isclose(u.sum() * SG.dx, 0.5 * (SG.length - SG.dx))


def test_heat_potential_matches_kernel_peak(default_grids):
    sg, _ = default_grids
    f = heat_potential(GridMeasure.dirac(sg, 0.0), sg, TimeGrid(0.01, 400))
    # (4 pi 0.01)^(-1/2)
    assert math.isclose(f.values[-1, sg.nx // 2], 2.8209, rel_tol=0.01)


def test_heat_potential_matches_image_series():
    sg, tg = SpaceGrid(-1.0, 1.0, 399), TimeGrid(0.1, 800)
    m = GridMeasure.gaussian(sg, 0.2, 0.1, 1.0, atoms=((-0.3, 0.5),))
    f = heat_potential(m, sg, tg)
    exact = exact_heat_potential(m, sg.nodes, 0.1)
    assert np.max(np.abs(f.values[-1] - exact)) <= 0.01 * exact.max()


def test_zero_data_and_zero_g():
    m = GridMeasure.gaussian(SG, 0.0, 0.2, 1.0, atoms=((0.4, 0.3),))
    assert np.array_equal(solve_truncated(GridMeasure.zero(SG), P2, SG, TG).values, np.zeros((TG.nt + 1, SG.nx)))
    assert np.allclose(solve_truncated(m, NonlinearitySpec("zero"), SG, TG).values, heat_potential(m, SG, TG).values, atol=1e-12, rtol=0)


def test_heat_potential_mass_nonincreasing():
    f = heat_potential(GridMeasure.dirac(SG, 0.0), SG, TG)
    mass = f.values.sum(axis=1) * SG.dx
    assert np.all(np.diff(mass) <= 1e-15) and mass.max() <= 1.0 + 1e-12


def test_flat_solution_tracks_ode():
    sg, tg = SpaceGrid(-20.0, 20.0, 799), TimeGrid(1.0, 1000)
    f = solve_truncated(GridMeasure.uniform(sg, 1.0), P2, sg, tg)
    mid = f.values[:, sg.nx // 2]
    assert np.max(np.abs(mid - 1.0 / (1.0 + tg.times))) <= 0.01


def test_poisson_potential_approaches_harmonic_profile():
    sg, tg = SpaceGrid(-1.0, 1.0, 99), TimeGrid(5.0, 500)
    bm = BoundaryMeasure(tg, {"left": GridMeasure.uniform(tg, 1.0)})
    f = poisson_heat_potential(bm, sg, tg)
    assert np.max(np.abs(f.values[-1] - (sg.x_right - sg.nodes) / sg.length)) < 1e-3
    assert np.all(np.diff(f.values[:, 10]) >= -1e-15)
    assert not poisson_heat_potential(BoundaryMeasure(tg), sg, tg).values.any()


def test_mass_balance_examples():
    f = heat_potential(GridMeasure.dirac(SG, 0.0), SG, TG)
    mb = mass_balance(f)
    assert mb.absorbed == 0.0
    assert math.isclose(mb.initial_mass, mb.final_mass + mb.outflux, rel_tol=1e-12)
    zero = mass_balance(solve_truncated(GridMeasure.zero(SG), P2, SG, TG), P2)
    assert zero.initial_mass == zero.final_mass == zero.absorbed == zero.outflux == 0.0
    g = P2.truncated(100.0)
    assert mass_balance(solve_truncated(GridMeasure.dirac(SG, 0.0), g, SG, TG), g).relative_residual() <= 1e-10


def test_integrability_diagnostic():
    sg, tg = SpaceGrid(-1.0, 1.0, 99), TimeGrid(0.25, 100)
    d = GridMeasure.dirac(sg, 0.0)
    zero = potential_integrability(d, NonlinearitySpec("zero"), sg, tg)
    assert zero.verdict == "finite" and zero.values[-1] == 0.0
    assert potential_integrability(d, P2, sg, tg).verdict == "finite"
    assert potential_integrability(d, P4, sg, tg).verdict == "diverging"


data = st.builds(
    lambda c, s, mass, x, w: GridMeasure.gaussian(SG, c, s, mass, atoms=((x, w),)),
    st.floats(-0.5, 0.5), st.floats(0.05, 0.4), st.floats(0.0, 3.0), st.floats(-0.8, 0.8), st.floats(0.0, 3.0),
)
gs = st.sampled_from([P2, P4, EXP, NonlinearitySpec("power", p=1.5)])


@settings(max_examples=25)
@given(data, st.floats(0.05, 0.95), gs, st.integers(0, 10))
def test_exact_comparison_in_data(m, c, g, j):
    g = g.truncated(4.0**j)
    assert np.all(solve_truncated(m.scale(c), g, SG, TG).values <= solve_truncated(m, g, SG, TG).values)


@settings(max_examples=25)
@given(data, gs, st.integers(0, 9), st.integers(1, 3))
def test_k_monotonicity_and_potential_domination(m, g, j, step):
    lo, hi = 4.0**j, 4.0 ** (j + step)
    u_lo = solve_truncated(m, g.truncated(lo), SG, TG).values
    u_hi = solve_truncated(m, g.truncated(hi), SG, TG).values
    assert np.all(u_hi <= u_lo)
    assert np.all(u_lo <= heat_potential(m, SG, TG).values)


@settings(max_examples=15)
@given(data, gs, st.integers(0, 8))
def test_subsolutions_lie_below_the_solution(m, g, j):
    k = 4.0**j
    candidate = solve_truncated(m, g.truncated(4 * k), SG, TG)
    assert is_subsolution(candidate, m, g.truncated(k))
    assert np.all(candidate.values <= solve_truncated(m, g.truncated(k), SG, TG).values)


@settings(max_examples=15)
@given(data, gs, st.sampled_from([1.0, 64.0, 4.0**10]))
def test_mass_balance_always_closes(m, g, k):
    g = g.truncated(k)
    assert mass_balance(solve_truncated(m, g, SG, TG), g).relative_residual() <= 1e-10


def test_boundary_layer_mass_decays():
    sg, tg = SpaceGrid(-1.0, 1.0, 399), TimeGrid(0.25, 400)
    f = solve_truncated(GridMeasure.gaussian(sg, 0.0, 0.2, 1.0), P2, sg, tg)
    rho = sg.rho
    vals = []
    for n in (4, 8, 16, 32, 64):
        vals.append(n * f.values[1:, rho <= 1.0 / n].sum() * sg.dx * tg.dt)
    assert np.all(np.diff(vals) < 0)
