"""Lateral measure data on the slab: truncated solves, lateral traces, reduced boundary measure.

The lateral boundary is the two endpoints times (0, T]. A trace is read at
interior nodes a distance ``beta`` from an endpoint, integrated in time
against a test function and extrapolated to beta -> 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from rml.grids import SpaceGrid, TimeGrid, check_same_grid
from rml.measures import ENDPOINTS, BoundaryMeasure, GridMeasure, boundary_total_mass, total_mass
from rml.nonlinearity import NonlinearitySpec
from rml.pde import MassBalance, SpaceTimeField, evolve, mass_balance
from rml.relaxation import (
    DEFAULT_SCHEDULE,
    FLAG_TOL,
    N_BASIS,
    TraceError,
    check_schedule,
    classify,
    density_basis,
    fit_atoms_density,
    hat,
    tail_extrapolate,
)

BETA_STEPS = (16, 8, 4, 2, 1)  # beta_j = 2^-j 16 dx


def solve_truncated_boundary(bm: BoundaryMeasure, g: NonlinearitySpec, sg: SpaceGrid, tg: TimeGrid) -> SpaceTimeField:
    """u_k with zero initial data and Dirichlet values from ``bm``."""
    check_same_grid(bm.tgrid, tg)
    if not np.isfinite(g.k) and g.kind != "zero":
        raise TraceError("truncated boundary solves need a finite level k")
    return evolve(np.zeros(sg.nx), g, sg, tg, bm.dirichlet_values())


def _node(sg: SpaceGrid, endpoint: str, steps: int) -> int:
    if endpoint not in ENDPOINTS:
        raise TraceError(f"unknown endpoint {endpoint!r}")
    if steps > sg.nx // 2:
        raise TraceError("grid too coarse for the lateral-trace offsets")
    return steps - 1 if endpoint == "left" else sg.nx - steps


def _time_samples(phi_t, tg: TimeGrid) -> np.ndarray:
    """Test function at t_1..t_nt (the times of the solver rows 1..nt)."""
    if callable(phi_t):
        return np.asarray(phi_t(tg.times[1:]), dtype=float) * np.ones(tg.nt)
    phi = np.asarray(phi_t, dtype=float)
    if phi.shape == (tg.nt + 1,):
        return phi[1:]
    if phi.shape != (tg.nt,):
        raise TraceError(f"time test function needs {tg.nt + 1} samples on [0, T]")
    return phi


@dataclass(frozen=True)
class LateralTrace:
    value: float
    betas: np.ndarray
    raw: np.ndarray
    alternative: float
    flagged: bool


def _fit_beta(betas: np.ndarray, raw: np.ndarray) -> np.ndarray:
    X = np.stack([np.ones_like(betas), betas, betas**2], axis=1)
    return np.linalg.lstsq(X, raw, rcond=None)[0][0]


def lateral_pairings(f: SpaceTimeField, endpoint: str, phis: np.ndarray):
    """Extrapolated ``int u(x_e -+ beta, t) phi(t) dt`` for each row of ``phis`` (n, nt)."""
    sg, tg = f.sgrid, f.tgrid
    betas = np.array(BETA_STEPS, dtype=float) * sg.dx
    cols = [_node(sg, endpoint, s) for s in BETA_STEPS]
    raw = (f.values[1:, cols].T @ phis.T) * tg.dt  # (n_beta, n)
    a = _fit_beta(betas, raw)
    b = _fit_beta(betas[:-1], raw[:-1])
    return a, b, betas, raw


def extract_lateral_trace(f: SpaceTimeField, endpoint: str, phi_t, flag_scale: float | None = None) -> LateralTrace:
    """Lateral trace pairing at one endpoint, extrapolated in beta -> 0.

    In one dimension the shell at distance beta is a single node, so the
    pairing is a time integral there. The fit is ``1, beta, beta^2`` over
    ``beta = 16, 8, 4, 2, 1`` dx; the fit without the finest offset is the
    check.
    """
    phi = _time_samples(phi_t, f.tgrid)
    a, b, betas, raw = lateral_pairings(f, endpoint, phi[None, :])
    scale = flag_scale if flag_scale is not None else max(float(np.abs(raw).max()), 1e-300)
    return LateralTrace(float(a[0]), betas, raw[:, 0], float(b[0]), bool(abs(a[0] - b[0]) > FLAG_TOL * scale))


# time basis and reconstruction


@dataclass(frozen=True)
class TimeHatBasis:
    tgrid: TimeGrid
    n: int = N_BASIS

    @property
    def spacing(self) -> float:
        return self.tgrid.T / (self.n + 1)

    @property
    def centers(self) -> np.ndarray:
        return self.spacing * np.arange(1, self.n + 1)

    def samples(self) -> np.ndarray:
        """(n, nt) hat values at t_1..t_nt."""
        t = self.tgrid.times[1:]
        return np.stack([hat(t, c, self.spacing) for c in self.centers])


def atom_cell(t: float, tg: TimeGrid) -> int:
    return max(min(int(np.ceil(t / tg.dt)) - 1, tg.nt - 1), 0)


def reconstruct_time_measure(pairings: np.ndarray, basis: TimeHatBasis, atom_times, mass: float | None = None, prior=None) -> GridMeasure:
    """Time atoms at ``atom_times`` plus a time density from hat pairings.

    ``prior`` (the data's time density) makes the density ``theta * prior``
    with ``0 <= theta <= 1``, as in the initial-trace reconstruction.
    """
    tg = basis.tgrid
    phis = basis.samples()
    cells = density_basis(basis.centers, tg.cell_centers)
    if prior is not None:
        cells = cells * np.asarray(prior, dtype=float)[None, :]
    # cell n of the data is paired at t_{n+1}
    A_dens = phis @ cells.T * tg.dt
    locs = [float(t) for t in atom_times]
    A_atoms = np.stack([phis[:, atom_cell(t, tg)] for t in locs], axis=1) if locs else np.zeros((basis.n, 0))
    upper = None if prior is None else 1.0
    coef, atoms = fit_atoms_density(A_dens, A_atoms, np.asarray(pairings, float), basis.centers, basis.spacing, locs, upper=upper)
    density = np.maximum(cells.T @ coef, 0.0)
    if mass is not None and locs:
        target = max(mass - float(density.sum() * tg.dt), 0.0)
        atoms = atoms * (target / atoms.sum()) if atoms.sum() > 0 else np.full(len(locs), target / len(locs))
    return GridMeasure(tg, tuple(zip(locs, atoms)), density)


def extract_boundary_trace(f: SpaceTimeField, bm: BoundaryMeasure, basis: TimeHatBasis, scale: float):
    """Per-endpoint pairings, masses, flags and the reconstructed BoundaryMeasure."""
    phis = basis.samples()
    ones = np.ones((1, f.tgrid.nt))
    parts, pairings, masses, flagged = {}, {}, {}, False
    for e in ENDPOINTS:
        est, _, _, _ = lateral_pairings(f, e, phis)
        a, b, _, _ = lateral_pairings(f, e, ones)
        masses[e] = min(float(a[0]), total_mass(bm.parts[e]))
        flagged |= bool(abs(a[0] - b[0]) > FLAG_TOL * scale)
        pairings[e] = est
        parts[e] = reconstruct_time_measure(est, basis, bm.parts[e].atom_locations, masses[e], bm.parts[e].density)
    return BoundaryMeasure(f.tgrid, parts), pairings, masses, flagged


# the ladder


@dataclass
class BoundaryLevel:
    k: float
    pairings: dict
    masses: dict
    trace: BoundaryMeasure
    shell_mass: float
    absorption: float
    flagged: bool
    balance: MassBalance


@dataclass
class BoundaryRelaxationResult:
    measure: BoundaryMeasure
    g: NonlinearitySpec
    schedule: tuple[float, ...]
    levels: list[BoundaryLevel]
    limit_trace: BoundaryMeasure
    final_field: SpaceTimeField | None
    limit_absorption: float
    flagged: bool
    basis: TimeHatBasis

    @property
    def trace_estimates(self) -> list[BoundaryMeasure]:
        return [lv.trace for lv in self.levels] + [self.limit_trace]

    @property
    def masses(self) -> np.ndarray:
        return np.array([boundary_total_mass(lv.trace) for lv in self.levels])

    @property
    def shell_masses(self) -> np.ndarray:
        """Time integral of u at the nodes next to both endpoints: exactly nonincreasing in k."""
        return np.array([lv.shell_mass for lv in self.levels])

    @property
    def absorption_integrals(self) -> np.ndarray:
        return np.array([lv.absorption for lv in self.levels])

    @property
    def defect_mass(self) -> float:
        return boundary_total_mass(self.measure) - boundary_total_mass(self.limit_trace)

    @property
    def max_balance_residual(self) -> float:
        return max(lv.balance.relative_residual() for lv in self.levels)

    def summary(self) -> dict:
        return {
            "g": self.g.label,
            "schedule": list(self.schedule),
            "masses": self.masses.tolist(),
            "shell_masses": self.shell_masses.tolist(),
            "absorption_integrals": self.absorption_integrals.tolist(),
            "limit_mass": boundary_total_mass(self.limit_trace),
            "limit_masses": {e: float(self.limit_trace.parts[e].atom_mass + self.limit_trace.parts[e].density_mass) for e in ENDPOINTS},
            "data_mass": boundary_total_mass(self.measure),
            "defect_mass": self.defect_mass,
            "flagged": self.flagged,
            "level_flags": [lv.flagged for lv in self.levels],
            "max_mass_balance_residual": self.max_balance_residual,
        }


def boundary_absorption_weights(sg: SpaceGrid, tg: TimeGrid) -> np.ndarray:
    """zeta dx dt with zeta = rho(x) (1 - t/T), vanishing on the lateral boundary."""
    decay = 1.0 - tg.times[:-1] / tg.T
    return decay[:, None] * sg.rho[None, :] * sg.dx * tg.dt


def reduced_boundary_measure(
    bm: BoundaryMeasure,
    g: NonlinearitySpec,
    schedule=DEFAULT_SCHEDULE,
    sg: SpaceGrid | None = None,
    tg: TimeGrid | None = None,
    n_basis: int = N_BASIS,
    keep_field: bool = True,
) -> BoundaryRelaxationResult:
    """Run the truncation ladder on lateral data and estimate the reduced boundary measure."""
    if sg is None:
        raise TraceError("a space grid is required")
    tg = bm.tgrid if tg is None else tg
    check_same_grid(bm.tgrid, tg)
    schedule = check_schedule(schedule)
    basis = TimeHatBasis(tg, n_basis)
    weights = boundary_absorption_weights(sg, tg)
    scale = max(boundary_total_mass(bm), 1e-300)
    gfull = g.untruncated()
    edge_nodes = [0, sg.nx - 1]
    levels = []
    f = None
    for k in schedule:
        gk = gfull.truncated(k)
        f = solve_truncated_boundary(bm, gk, sg, tg)
        trace, pairings, masses, flagged = extract_boundary_trace(f, bm, basis, scale)
        if levels and any(masses[e] > levels[-1].masses[e] for e in ENDPOINTS):
            # u_k decreases in k: clip each endpoint to the previous level and refit
            masses = {e: min(masses[e], levels[-1].masses[e]) for e in ENDPOINTS}
            trace = BoundaryMeasure(tg, {e: reconstruct_time_measure(pairings[e], basis, bm.parts[e].atom_locations, masses[e], bm.parts[e].density) for e in ENDPOINTS})
        levels.append(
            BoundaryLevel(
                k=k,
                pairings=pairings,
                masses=masses,
                trace=trace,
                shell_mass=float(f.values[1:, edge_nodes].sum() * tg.dt),
                absorption=float((gk(f.values[1:]) * weights).sum()),
                flagged=flagged,
                balance=mass_balance(f, gk),
            )
        )
    parts = {}
    for e in ENDPOINTS:
        est = tail_extrapolate(np.array([lv.pairings[e] for lv in levels]))
        mass = float(tail_extrapolate(np.array([[lv.masses[e]] for lv in levels]))[0])
        parts[e] = reconstruct_time_measure(est, basis, bm.parts[e].atom_locations, mass, bm.parts[e].density)
    return BoundaryRelaxationResult(
        measure=bm,
        g=gfull,
        schedule=schedule,
        levels=levels,
        limit_trace=BoundaryMeasure(tg, parts),
        final_field=f if keep_field else None,
        limit_absorption=float((gfull(f.values[1:]) * weights).sum()),
        flagged=levels[-1].flagged,
        basis=basis,
    )


def boundary_goodness(result: BoundaryRelaxationResult, tol: float | None = None) -> dict:
    tol = 0.05 * boundary_total_mass(result.measure) if tol is None else tol
    gaps = [abs(result.limit_absorption - a) for a in result.absorption_integrals]
    return {
        "verdict": classify(gaps, result.defect_mass, tol),
        "gaps": gaps,
        "defect_mass": result.defect_mass,
        "tol": tol,
        "flagged": result.flagged,
    }
