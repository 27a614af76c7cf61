"""Truncation ladder k -> inf, trace extraction and reduced-measure estimates.

For each level k the truncated problem is solved and its initial trace is
estimated as a measure: atoms at the data's atom locations plus a density
that is piecewise linear through the centres of a hat basis. The shape comes
from diffusion-compensated sine coefficients of the first few steps; the
total mass from the slice extrapolation of ``int u(t) dx``. The last level,
extrapolated in k, estimates the reduced measure mu*, and
``mu(Omega) - mu*(Omega)`` is the defect.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import dst
from scipy.optimize import lsq_linear, nnls

from rml.grids import SpaceGrid, TimeGrid, check_same_grid
from rml.measures import GridMeasure, total_mass
from rml.nonlinearity import NonlinearitySpec, implicit_reaction_solve
from rml.pde import DiffusionStep, MassBalance, SpaceTimeField, deposit, mass_balance, solve_truncated

DEFAULT_SCHEDULE = tuple(float(4**j) for j in range(11))
N_BASIS = 32
FIRST_SLICE = 3  # slices at T 2^-j for j >= 3
SLICE_MIN_STEPS = 1.5  # smallest slice time in units of dt
FIT_POINTS = 5
FLAG_TOL = 0.02
MAX_GAIN = 100.0  # largest backward amplification accepted per mode
FIT_STEPS = 6


class TraceError(ValueError):
    pass


# test functions


def hat(x, center: float, half_width: float) -> np.ndarray:
    return np.clip(1.0 - np.abs(np.asarray(x) - center) / half_width, 0.0, None)


@dataclass(frozen=True)
class HatBasis:
    """``n`` hats centred at ``x_L + j H`` (j = 1..n), ``H = L / (n + 1)``."""

    sgrid: SpaceGrid
    n: int = N_BASIS

    @property
    def spacing(self) -> float:
        return self.sgrid.length / (self.n + 1)

    @property
    def centers(self) -> np.ndarray:
        return self.sgrid.x_left + self.spacing * np.arange(1, self.n + 1)

    def samples(self) -> np.ndarray:
        """(n, nx) hat values at the interior nodes."""
        x = self.sgrid.nodes
        return np.stack([hat(x, c, self.spacing) for c in self.centers])


def _as_node_samples(phi, sg: SpaceGrid) -> np.ndarray:
    if callable(phi):
        return np.asarray(phi(sg.nodes), dtype=float) * np.ones(sg.nx)
    phi = np.asarray(phi, dtype=float)
    if phi.shape == (sg.nx + 2,):
        if phi[0] != 0.0 or phi[-1] != 0.0:
            raise TraceError("test function must vanish at both endpoints")
        return phi[1:-1]
    if phi.shape != (sg.nx,):
        raise TraceError(f"test function needs {sg.nx} interior samples (or {sg.nx + 2} with endpoints)")
    return phi


# trace extraction


def extract_trace_weak(f: SpaceTimeField, g: NonlinearitySpec | None, phi) -> float:
    """``int phi dmu`` from the weak identity with ``zeta = phi (1 - t/T)``.

    Discrete quadrature of ``u phi / T - u (1 - t/T) D2 phi + (1 - t/T) phi g(u)``
    with u taken at the end of each step and zeta at its start (the pairing
    under which the backward-Euler diffusion is exactly adjoint). ``phi``
    must vanish at both endpoints; ``D2`` is the solver's 3-point stencil.
    """
    sg, tg = f.sgrid, f.tgrid
    g = f.g if g is None else g
    if callable(phi):
        full = np.asarray(phi(sg.all_nodes), dtype=float) * np.ones(sg.nx + 2)
        if abs(full[0]) > 1e-12 or abs(full[-1]) > 1e-12:
            raise TraceError("test function must vanish at both endpoints")
        full[0] = full[-1] = 0.0
    else:
        full = np.asarray(phi, dtype=float)
        if full.shape == (sg.nx,):
            full = np.concatenate(([0.0], full, [0.0]))
        if full.shape != (sg.nx + 2,):
            raise TraceError("test function samples do not match the grid")
        if full[0] != 0.0 or full[-1] != 0.0:
            raise TraceError("test function must vanish at both endpoints")
    ph = full[1:-1]
    lap = (full[:-2] - 2.0 * ph + full[2:]) / sg.dx**2
    u = f.values[1:]
    decay = 1.0 - tg.times[:-1] / tg.T
    total = (u @ ph).sum() / tg.T - decay @ (u @ lap) + decay @ (g(u) @ ph)
    return float(total * sg.dx * tg.dt)


@dataclass(frozen=True)
class SliceTrace:
    value: float
    times: np.ndarray
    raw: np.ndarray
    alternative: float
    flagged: bool


def slice_indices(tg: TimeGrid) -> np.ndarray:
    idx = []
    j = FIRST_SLICE
    while tg.T * 2.0**-j >= SLICE_MIN_STEPS * tg.dt:
        idx.append(max(1, int(round(tg.nt * 2.0**-j))))
        j += 1
    if len(idx) < FIT_POINTS + 1:
        raise TraceError(
            f"time grid too coarse for slice extraction: {len(idx)} slices, need {FIT_POINTS + 1}"
        )
    return np.array(idx)


def _fit_zero(t: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Value at t = 0 of the least-squares fit ``s0 + a sqrt(t) + b t`` (columnwise)."""
    X = np.stack([np.ones_like(t), np.sqrt(t), t], axis=1)
    coef, *_ = np.linalg.lstsq(X, s, rcond=None)
    return coef[0]


def extrapolate_slices(times: np.ndarray, values: np.ndarray, flag_scale: float | None = None):
    """Extrapolate slice pairings to t -> 0.

    ``values`` is (n_slices,) or (n_slices, n_functions). The fit over the
    ``FIT_POINTS`` smallest times is the estimate; the fit over the window
    shifted one slice later is the check. A disagreement above ``FLAG_TOL``
    times ``flag_scale`` marks the tail as non-converging.
    """
    a = _fit_zero(times[-FIT_POINTS:], values[-FIT_POINTS:])
    b = _fit_zero(times[-FIT_POINTS - 1 : -1], values[-FIT_POINTS - 1 : -1])
    scale = flag_scale if flag_scale is not None else max(float(np.abs(values).sum(axis=-1).max()), 1e-300)
    disagreement = float(np.abs(a - b).sum())
    return a, b, disagreement > FLAG_TOL * scale


def extract_trace_slices(f: SpaceTimeField, phi, flag_scale: float | None = None) -> SliceTrace:
    """``lim_{t->0} int u(t) phi dx`` from slices at ``t_j = T 2^-j`` (j >= 3)."""
    sg, tg = f.sgrid, f.tgrid
    ph = _as_node_samples(phi, sg)
    idx = slice_indices(tg)
    times = idx * tg.dt
    raw = f.values[idx] @ ph * sg.dx
    if flag_scale is None:
        flag_scale = max(float(np.abs(raw).max()), 1e-300)
    a, b, flagged = extrapolate_slices(times, raw, flag_scale)
    return SliceTrace(float(a), times, raw, float(b), bool(flagged))


# trace as a measure: diffusion-compensated sine coefficients


def sine_modes(sg: SpaceGrid, dt: float) -> np.ndarray:
    """Per-step amplification ``q_j`` of the inverse diffusion step on sine mode j."""
    r = dt / sg.dx**2
    j = np.arange(1, sg.nx + 1)
    return 1.0 + 4.0 * r * np.sin(j * np.pi / (2 * (sg.nx + 1))) ** 2


def sine_coefficients(f: SpaceTimeField, max_gain: float = MAX_GAIN, points: int = FIT_STEPS) -> np.ndarray:
    """Trace coefficients on the orthonormal discrete sine modes.

    Diffusion divides mode j by ``q_j`` per step, so ``B_j(n) = q_j^n <u^n, s_j>``
    changes only through absorption. For each mode, ``B_j`` over the first
    ``points`` steps (while ``q_j^n <= max_gain``) is fitted by
    ``1, sqrt(t), E_j(t)`` with ``E_j(n) = dt sum_{m<=n} q_j^m``, the response
    to steady absorption; the intercept is the coefficient. Modes with fewer
    than 4 usable steps are dropped, so the result holds the lowest J modes.
    """
    sg, tg = f.sgrid, f.tgrid
    q = sine_modes(sg, tg.dt)
    usable = np.minimum(np.floor(math.log(max_gain) / np.log(q)), min(points, tg.nt)).astype(int)
    nmodes = int(np.count_nonzero(usable >= 4))
    if nmodes == 0:
        raise TraceError("no sine mode has four usable steps; refine the time grid")
    nmax = int(usable[:nmodes].max())
    U = dst(f.values[1 : nmax + 1, :], type=1, norm="ortho", axis=1)[:, :nmodes]
    out = np.empty(nmodes)
    for j in range(nmodes):
        n = np.arange(1, usable[j] + 1)
        gain = q[j] ** n
        t = n * tg.dt
        X = np.stack([np.ones_like(t), np.sqrt(t), tg.dt * np.cumsum(gain)], axis=1)
        out[j] = np.linalg.lstsq(X, U[n - 1, j] * gain, rcond=None)[0][0]
    return out


def _tie_rows(centers: np.ndarray, atoms, spacing: float, width: int) -> np.ndarray:
    """Rows tying density values near atoms to a cubic through the nearest clean centres."""
    near = sorted({i for x in atoms for i in np.nonzero(np.abs(centers - x) < 2 * spacing)[0].tolist()})
    clean = [i for i in range(len(centers)) if i not in near]
    rows = []
    for i in near:
        nb = [c for c in clean if c < i][-2:] + [c for c in clean if c > i][:2]
        if not nb:
            continue
        row = np.zeros(width)
        row[i] = 1.0
        xs = centers[nb]
        for a, xa in zip(nb, xs):
            row[a] -= np.prod([(centers[i] - xb) / (xa - xb) for xb in xs if xb != xa])
        rows.append(row)
    return np.array(rows).reshape(len(rows), width)


def fit_atoms_density(A_dens, A_atoms, rhs, centers, spacing, atoms, tie_weight: float = 1e3, upper: float | None = None):
    """Bounded least squares for density node values and atom masses.

    Density and atom are not separable at basis resolution, so density values
    at centres within two spacings of an atom are tied to the interpolant of
    the nearest atom-free centres and the local excess is read as atom mass.
    ``upper`` caps the density coefficients (atoms stay unbounded above).
    """
    A = np.hstack([A_dens, A_atoms])
    ties = _tie_rows(centers, atoms, spacing, A.shape[1])
    scale = tie_weight * np.linalg.norm(A, axis=0).max()
    M = np.vstack([A, scale * ties])
    b = np.concatenate([rhs, np.zeros(len(ties))])
    nb = A_dens.shape[1]
    if upper is None:
        coef, _ = nnls(M, b, maxiter=50 * A.shape[1])
    else:
        hi = np.concatenate([np.full(nb, float(upper)), np.full(A_atoms.shape[1], np.inf)])
        coef = lsq_linear(M, b, bounds=(np.zeros(A.shape[1]), hi), method="bvls").x
    return coef[:nb], coef[nb:]


def density_basis(centers: np.ndarray, x: np.ndarray) -> np.ndarray:
    """(n, len(x)) piecewise-linear cardinal functions, constant beyond the outer centres."""
    eye = np.eye(len(centers))
    return np.stack([np.interp(x, centers, eye[i]) for i in range(len(centers))])


def reconstruct_measure(coeffs: np.ndarray, basis: HatBasis, atom_locations, mass: float | None = None, prior=None) -> GridMeasure:
    """Atoms at ``atom_locations`` plus a density from low sine coefficients.

    With ``prior`` (cell densities of the data) the density is ``theta * prior``
    with a smooth ``0 <= theta <= 1``: a trace below the data can only thin its
    density, so jumps and narrow features of the data carry over. Without it
    the density itself is piecewise linear through the centres. With ``mass``
    given, the atoms take up the difference between it and the density mass
    (split in proportion to the fitted atoms, never below 0).
    """
    sg = basis.sgrid
    J = len(coeffs)
    cells = density_basis(basis.centers, sg.cell_centers)
    if prior is not None:
        cells = cells * np.asarray(prior, dtype=float)[None, :]
    nodal = 0.5 * (cells[:, :-1] + cells[:, 1:])  # deposit of each basis function
    A_dens = dst(nodal, type=1, norm="ortho", axis=1)[:, :J].T
    locs = [float(x) for x in atom_locations]
    A_atoms = np.zeros((J, len(locs)))
    for l, x in enumerate(locs):
        A_atoms[:, l] = dst(deposit(GridMeasure.dirac(sg, x), sg), type=1, norm="ortho")[:J]
    upper = None if prior is None else 1.0
    dens_coef, atoms = fit_atoms_density(A_dens, A_atoms, np.asarray(coeffs, float), basis.centers, basis.spacing, locs, upper=upper)
    density = np.maximum(cells.T @ dens_coef, 0.0)
    if mass is not None and locs:
        target = max(mass - float(density.sum() * sg.dx), 0.0)
        atoms = atoms * (target / atoms.sum()) if atoms.sum() > 0 else np.full(len(locs), target / len(locs))
    return GridMeasure(sg, tuple(zip(locs, atoms)), density)


def ground_mode(sg: SpaceGrid) -> np.ndarray:
    return np.sin(np.pi * (sg.nodes - sg.x_left) / sg.length)


def extract_trace_measure(f: SpaceTimeField, atom_locations, n_basis: int = N_BASIS, prior=None) -> tuple[GridMeasure, SliceTrace]:
    """Trace estimate of one field and the slice extraction of its total mass."""
    st = extract_trace_slices(f, np.ones(f.sgrid.nx), flag_scale=max(float(f.values[0].sum() * f.sgrid.dx), 1e-300))
    mu = reconstruct_measure(sine_coefficients(f), HatBasis(f.sgrid, n_basis), atom_locations, st.value, prior)
    return mu, st


# the ladder


@dataclass
class LevelResult:
    k: float
    coefficients: np.ndarray
    mass: float
    trace: GridMeasure
    slice_mass: float
    absorption: float
    flagged: bool
    balance: MassBalance


@dataclass
class RelaxationResult:
    measure: GridMeasure
    g: NonlinearitySpec
    schedule: tuple[float, ...]
    levels: list[LevelResult]
    limit_coefficients: np.ndarray
    limit_mass: float
    limit_trace: GridMeasure
    final_field: SpaceTimeField | None
    limit_absorption: float
    flagged: bool
    basis: HatBasis = field(repr=False, default=None)

    @property
    def trace_estimates(self) -> list[GridMeasure]:
        return [lv.trace for lv in self.levels] + [self.limit_trace]

    @property
    def masses(self) -> np.ndarray:
        return np.array([total_mass(lv.trace) for lv in self.levels])

    @property
    def slice_masses(self) -> np.ndarray:
        """``int u(t_min) dx`` at the smallest slice: exactly nonincreasing in k."""
        return np.array([lv.slice_mass for lv in self.levels])

    @property
    def absorption_integrals(self) -> np.ndarray:
        return np.array([lv.absorption for lv in self.levels])

    @property
    def defect_mass(self) -> float:
        return total_mass(self.measure) - total_mass(self.limit_trace)

    @property
    def max_balance_residual(self) -> float:
        return max(lv.balance.relative_residual() for lv in self.levels)

    def hat_pairings(self) -> np.ndarray:
        """Pairings of every trace estimate (levels, then the limit) with the hat basis."""
        phis = self.basis.samples()
        sg = self.measure.grid
        return np.array([phis @ deposit(mu, sg) * sg.dx for mu in self.trace_estimates])

    def summary(self) -> dict:
        return {
            "g": self.g.label,
            "schedule": list(self.schedule),
            "masses": self.masses.tolist(),
            "slice_masses": self.slice_masses.tolist(),
            "absorption_integrals": self.absorption_integrals.tolist(),
            "limit_mass": total_mass(self.limit_trace),
            "limit_atom_mass": self.limit_trace.atom_mass,
            "limit_density_mass": self.limit_trace.density_mass,
            "data_mass": total_mass(self.measure),
            "defect_mass": self.defect_mass,
            "flagged": self.flagged,
            "level_flags": [lv.flagged for lv in self.levels],
            "max_mass_balance_residual": self.max_balance_residual,
        }


def absorption_weights(sg: SpaceGrid, tg: TimeGrid) -> np.ndarray:
    """zeta rho dx dt for the reference test function zeta = 1 - t/T (rows n = 1..nt)."""
    decay = 1.0 - tg.times[:-1] / tg.T
    return decay[:, None] * sg.rho[None, :] * sg.dx * tg.dt


def tail_extrapolate(seq: np.ndarray) -> np.ndarray:
    """One Aitken step on the last three rows, only where the tail is monotone and contracting."""
    seq = np.asarray(seq, dtype=float)
    if seq.shape[0] < 3:
        return seq[-1].copy()
    a, b, c = seq[-3], seq[-2], seq[-1]
    d1, d2 = b - a, c - b
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(d1 != 0, d2 / d1, 0.0)
    ok = (ratio > 0) & (ratio < 0.5)
    return c + np.where(ok, d2 * ratio / (1.0 - np.where(ok, ratio, 0.0)), 0.0)


def check_schedule(schedule) -> tuple[float, ...]:
    schedule = tuple(float(k) for k in schedule)
    if len(schedule) < 4 or any(b <= a for a, b in zip(schedule, schedule[1:])) or schedule[0] <= 0:
        raise TraceError("schedule must be positive, strictly increasing, with at least 4 levels")
    return schedule


def reduced_measure(
    m: GridMeasure,
    g: NonlinearitySpec,
    schedule=DEFAULT_SCHEDULE,
    sg: SpaceGrid | None = None,
    tg: TimeGrid | None = None,
    n_basis: int = N_BASIS,
    keep_field: bool = True,
) -> RelaxationResult:
    """Run the truncation ladder and estimate mu*."""
    sg = m.grid if sg is None else sg
    check_same_grid(m.grid, sg)
    if tg is None:
        raise TraceError("a time grid is required")
    schedule = check_schedule(schedule)
    basis = HatBasis(sg, n_basis)
    # mu* <= mu: the trace density is a thinning of the data density
    prior = m.density
    idx = slice_indices(tg)
    ones = np.ones(sg.nx)
    weights = absorption_weights(sg, tg)
    scale = max(total_mass(m), 1e-300)
    gfull = g.untruncated()
    levels = []
    f = None
    for k in schedule:
        gk = gfull.truncated(k)
        f = solve_truncated(m, gk, sg, tg)
        coeffs = sine_coefficients(f)
        st = extract_trace_slices(f, ones, scale)
        # g_k is bounded, so u_k has trace mu: no level can carry more mass;
        # u_k decreases in k, so neither can a level exceed the one before it
        mass = min(st.value, total_mass(m), levels[-1].mass if levels else math.inf)
        levels.append(
            LevelResult(
                k=k,
                coefficients=coeffs,
                mass=mass,
                trace=reconstruct_measure(coeffs, basis, m.atom_locations, mass, prior),
                slice_mass=float(f.values[idx[-1]].sum() * sg.dx),
                absorption=float((gk(f.values[1:]) * weights).sum()),
                flagged=st.flagged,
                balance=mass_balance(f, gk),
            )
        )
    limit = tail_extrapolate(np.array([lv.coefficients for lv in levels]))
    limit_mass = float(tail_extrapolate(np.array([[lv.mass] for lv in levels]))[0])
    return RelaxationResult(
        measure=m,
        g=gfull,
        schedule=schedule,
        levels=levels,
        limit_coefficients=limit,
        limit_mass=limit_mass,
        limit_trace=reconstruct_measure(limit, basis, m.atom_locations, limit_mass, prior),
        final_field=f if keep_field else None,
        limit_absorption=float((gfull(f.values[1:]) * weights).sum()),
        flagged=levels[-1].flagged,
        basis=basis,
    )


@dataclass(frozen=True)
class GoodnessVerdict:
    verdict: str
    gaps: tuple[float, ...]
    defect_mass: float
    tol: float
    flagged: bool

    def as_dict(self):
        return {
            "verdict": self.verdict,
            "gaps": list(self.gaps),
            "defect_mass": self.defect_mass,
            "tol": self.tol,
            "flagged": self.flagged,
        }


def classify(gaps, defect: float, tol: float) -> str:
    """good: last gap and defect within tol; not-good: last two gaps or the defect above 3 tol."""
    if gaps[-1] <= tol and defect <= tol:
        return "good"
    if min(gaps[-2:]) > 3 * tol or defect > 3 * tol:
        return "not-good"
    return "inconclusive"


def goodness_from(result: RelaxationResult, tol: float | None = None) -> GoodnessVerdict:
    """Classify a finished ladder.

    The gap at level j is ``|iint g(u_last) zeta rho - iint g_kj(u_kj) zeta rho|``,
    which tends to zero exactly when g_k(u_k) -> g(u) weakly.
    """
    tol = 0.05 * total_mass(result.measure) if tol is None else tol
    gaps = tuple(abs(result.limit_absorption - a) for a in result.absorption_integrals)
    defect = result.defect_mass
    return GoodnessVerdict(classify(gaps, defect, tol), gaps, float(defect), float(tol), result.flagged)


def is_good(m, g, schedule=DEFAULT_SCHEDULE, sg=None, tg=None, tol=None) -> GoodnessVerdict:
    return goodness_from(reduced_measure(m, g, schedule, sg, tg, keep_field=False), tol)


def solver_step(u: np.ndarray, g: NonlinearitySpec, sg: SpaceGrid, dt: float, step: DiffusionStep | None = None):
    step = DiffusionStep(sg, dt) if step is None else step
    w = step(u)
    return implicit_reaction_solve(g, dt, w) if g.kind != "zero" else w


def is_subsolution(f: SpaceTimeField, m: GridMeasure, g: NonlinearitySpec, tol: float | None = None) -> bool:
    """Discrete subsolution test: ``u^{n+1} <= S_dt(u^n)`` and ``u^0 <= deposit(m)``.

    ``S_dt`` is one step of the solver with absorption ``g``. The default
    tolerance ``1e-9 max|u|`` only absorbs the residual of the scalar solves.
    """
    sg, tg = f.sgrid, f.tgrid
    check_same_grid(m.grid, sg)
    if tol is None:
        tol = 1e-9 * max(1.0, float(np.abs(f.values).max()))
    if np.any(f.values[0] > deposit(m, sg) + tol):
        return False
    step = DiffusionStep(sg, tg.dt)
    for n in range(tg.nt):
        if np.any(f.values[n + 1] > solver_step(f.values[n], g, sg, tg.dt, step) + tol):
            return False
    return True
