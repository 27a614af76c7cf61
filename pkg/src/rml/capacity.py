"""Discrete L1 capacities of compact sets at t = 0 and on the lateral boundary.

The unknown is the space-time residual ``f`` (values on steps n = 0..nt-1).
The test function is recovered by the backward recursion

    psi^nt = 0,    psi^n = dt f^n + M^{-1} psi^{n+1},

with ``M = I - dt D2`` the diffusion matrix of the forward stepper. This is
the exact adjoint of backward Euler: for any forward heat solution u,
``sum_n dt <f^n, u^n> dx = <psi^0, u^0> dx + lateral terms``, so the discrete
problem has the same duality structure as the continuous one.

Constraints:
  initial kind   psi^0_i >= 1 at every node x_i in K;
  lateral kind   (M^{-1} psi^n)_edge / dx >= 1 for every time cell
                 (t_{n-1}, t_n] inside K, where edge is the first interior
                 node next to the chosen endpoint (discrete -d psi/d nu).

The objective ``sum |f| dx dt`` is minimized by Chambolle-Pock primal-dual
iterations. ``M^{-1}`` is applied through its sine-transform diagonalization,
which is the same matrix as the tridiagonal solve, just cheaper in batches.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import dst
from scipy.optimize import linprog

from rml.grids import SpaceGrid, TimeGrid
from rml.measures import merge_intervals
from rml.pde import DiffusionStep

KINDS = ("initial", "lateral")
LP_MAX_UNKNOWNS = 2000
EDGE_TOL = 1e-9


class CapacityError(ValueError):
    pass


def hausdorff_measure(K) -> float:
    """Length of a finite union of closed intervals (H^1 in one dimension)."""
    return float(sum(b - a for a, b in merge_intervals(K)))


@dataclass(frozen=True)
class CapacityProblem:
    kind: str
    K: tuple[tuple[float, float], ...]
    sgrid: SpaceGrid
    tgrid: TimeGrid
    endpoint: str = "left"
    max_iters: int = 200_000
    tol: float = 1e-4
    safety: float = 0.95
    check_every: int = 100
    power_iters: int = 60
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise CapacityError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.endpoint not in ("left", "right"):
            raise CapacityError(f"endpoint must be left or right, got {self.endpoint!r}")
        K = tuple(merge_intervals(self.K))
        if not K:
            raise CapacityError("K is empty")
        object.__setattr__(self, "K", K)
        if self.kind == "initial":
            sg = self.sgrid
            gap = 2 * sg.dx
            if K[0][0] < sg.x_left + gap - EDGE_TOL or K[-1][1] > sg.x_right - gap + EDGE_TOL:
                raise CapacityError(f"K must stay at distance >= 2 dx = {gap:g} from the boundary")
        else:
            T = self.tgrid.T
            if K[0][0] < 0 or K[-1][1] > T:
                raise CapacityError(f"lateral K must lie in [0, T] = [0, {T:g}]")


def constraint_nodes(problem: CapacityProblem) -> np.ndarray:
    """Interior node indices (0-based) of the nodes lying in K."""
    x = problem.sgrid.nodes
    tol = EDGE_TOL * problem.sgrid.length
    inside = np.zeros(x.size, dtype=bool)
    for a, b in problem.K:
        inside |= (x >= a - tol) & (x <= b + tol)
    return np.nonzero(inside)[0]


def constraint_cells(problem: CapacityProblem) -> np.ndarray:
    """Time cells n (1..nt) with (t_{n-1}, t_n] inside K."""
    t = problem.tgrid.times
    tol = EDGE_TOL * problem.tgrid.T
    n = np.arange(1, problem.tgrid.nt + 1)
    inside = np.zeros(n.size, dtype=bool)
    for a, b in problem.K:
        inside |= (t[n - 1] >= a - tol) & (t[n] <= b + tol)
    return n[inside]


def _sine(a):
    return dst(a, type=1, norm="ortho", axis=-1)


@dataclass
class CapacityModel:
    """Assembled linear model: ``forward(f)`` gives the constraint values."""

    problem: CapacityProblem
    rows: np.ndarray
    eig: np.ndarray  # eigenvalues of M^{-1} in the sine basis
    edge_row: np.ndarray | None = None
    _powers: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_constraints(self) -> int:
        return int(self.rows.size)

    @property
    def shape(self) -> tuple[int, int]:
        return self.problem.tgrid.nt, self.problem.sgrid.nx

    @property
    def weight(self) -> float:
        return self.problem.sgrid.dx * self.problem.tgrid.dt

    def forward(self, f: np.ndarray) -> np.ndarray:
        dt, dx = self.problem.tgrid.dt, self.problem.sgrid.dx
        F = _sine(f)
        if self.problem.kind == "initial":
            return _sine(dt * np.einsum("nk,nk->k", self._powers, F))[self.rows]
        nt = self.problem.tgrid.nt
        out = np.zeros(nt + 1)
        Q = np.zeros_like(self.eig)
        for n in range(nt - 1, -1, -1):
            Q = self.eig * (F[n] + Q)
            out[n] = self.edge_row @ Q
        return (dt / dx) * out[self.rows]

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        dt, dx = self.problem.tgrid.dt, self.problem.sgrid.dx
        nt, nx = self.shape
        if self.problem.kind == "initial":
            Y = np.zeros(nx)
            Y[self.rows] = y
            return dt * _sine(self._powers * _sine(Y)[None, :])
        Y = np.zeros(nt + 1)
        Y[self.rows] = y
        R = np.zeros(nx)
        G = np.empty((nt, nx))
        for m in range(nt):
            R = self.eig * (self.edge_row * Y[m] + R)
            G[m] = R
        return (dt / dx) * _sine(G)


def assemble(problem: CapacityProblem) -> CapacityModel:
    sg, tg = problem.sgrid, problem.tgrid
    r = tg.dt / sg.dx**2
    k = np.arange(1, sg.nx + 1)
    eig = 1.0 / (1.0 + 4.0 * r * np.sin(k * np.pi / (2 * (sg.nx + 1))) ** 2)
    if problem.kind == "initial":
        rows = constraint_nodes(problem)
        if rows.size == 0:
            raise CapacityError(f"K = {problem.K} contains no grid node")
        powers = eig[None, :] ** np.arange(tg.nt)[:, None]
        return CapacityModel(problem, rows, eig, None, powers)
    rows = constraint_cells(problem)
    if rows.size == 0:
        raise CapacityError(f"K = {problem.K} contains no full time cell")
    if rows.max() >= tg.nt:
        # psi^nt = 0 makes the last cell's constraint unsatisfiable
        raise CapacityError("lateral K must end before the final time T")
    e = np.zeros(sg.nx)
    e[0 if problem.endpoint == "left" else -1] = 1.0
    return CapacityModel(problem, rows, eig, _sine(e))


@dataclass
class CapacityResult:
    value: float
    certificate_psi: np.ndarray  # (nt + 1, nx), psi^n on interior nodes
    residual_f: np.ndarray  # (nt, nx)
    hausdorff: float
    iterations: int
    gap: float
    dual_value: float
    converged: bool
    constraint_violation: float
    min_psi: float
    n_constraints: int
    seconds: float

    def as_dict(self) -> dict:
        return {
            "value": self.value,
            "hausdorff": self.hausdorff,
            "relative_error": abs(self.value - self.hausdorff) / self.hausdorff if self.hausdorff else None,
            "gap": self.gap,
            "dual_value": self.dual_value,
            "iters": self.iterations,
            "converged": self.converged,
            "constraint_violation": self.constraint_violation,
            "min_psi": self.min_psi,
            "n_constraints": self.n_constraints,
            "seconds": self.seconds,
        }


def _operator_norm(model: CapacityModel, iters: int, seed: int) -> float:
    rng = np.random.default_rng(seed)
    v = rng.random(model.shape)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        w = model.adjoint(model.forward(v))
        est = float(np.linalg.norm(w))
        if est == 0.0:
            break
        v = w / est
    return math.sqrt(est)


def backward_psi(f: np.ndarray, sg: SpaceGrid, tg: TimeGrid) -> np.ndarray:
    """psi from the residual with tridiagonal solves (the stepper's own matrix)."""
    step = DiffusionStep(sg, tg.dt)
    psi = np.zeros((tg.nt + 1, sg.nx))
    for n in range(tg.nt - 1, -1, -1):
        psi[n] = tg.dt * f[n] + step.solve(psi[n + 1].copy())
    return psi


def residual_from_psi(psi: np.ndarray, sg: SpaceGrid, tg: TimeGrid) -> np.ndarray:
    """f^n = (psi^n - M^{-1} psi^{n+1}) / dt, the discrete -(d_t psi + Laplacian psi)."""
    step = DiffusionStep(sg, tg.dt)
    f = np.empty((tg.nt, sg.nx))
    for n in range(tg.nt):
        f[n] = (psi[n] - step.solve(psi[n + 1].copy())) / tg.dt
    return f


def constraint_values(problem: CapacityProblem, psi: np.ndarray, rows: np.ndarray | None = None) -> np.ndarray:
    """Evaluate the constraint functionals on a test function psi via tridiagonal solves."""
    sg, tg = problem.sgrid, problem.tgrid
    if problem.kind == "initial":
        rows = constraint_nodes(problem) if rows is None else rows
        return psi[0, rows]
    rows = constraint_cells(problem) if rows is None else rows
    step = DiffusionStep(sg, tg.dt)
    j = 0 if problem.endpoint == "left" else -1
    return np.array([step.solve(psi[n].copy())[j] for n in rows]) / sg.dx


def solve_capacity(problem: CapacityProblem, log=None) -> CapacityResult:
    """Chambolle-Pock on ``min |g|_1  s.t.  B g >= 1`` with ``g = f dx dt``.

    Iterates are certified every ``check_every`` steps: the primal iterate is
    rescaled to feasibility (the constraints are homogeneous in f) and the
    dual iterate is rescaled into ``|B^T y|_inf <= 1``; weak duality then
    brackets the optimum. Stops when the gap is ``<= tol * max(1, value)``.
    """
    t0 = time.perf_counter()
    model = assemble(problem)
    w = model.weight
    B = lambda g: model.forward(g / w)
    BT = lambda y: model.adjoint(y) / w

    class _Scaled:
        shape = model.shape
        forward = staticmethod(B)
        adjoint = staticmethod(BT)

    L = _operator_norm(_Scaled, problem.power_iters, problem.seed)
    tau = sigma = problem.safety / L
    g = np.zeros(model.shape)
    y = np.zeros(model.n_constraints)
    best = (math.inf, None, -math.inf)
    it = 0
    converged = False
    for it in range(1, problem.max_iters + 1):
        gn = g + tau * BT(y)
        gn = np.sign(gn) * np.maximum(np.abs(gn) - tau, 0.0)
        y = np.maximum(0.0, y + sigma * (1.0 - B(2.0 * gn - g)))
        g = gn
        if it % problem.check_every == 0 or it == problem.max_iters:
            c = B(g)
            cmin = float(c.min())
            primal = float(np.abs(g).sum()) / cmin if cmin > 0 else math.inf
            z = float(np.abs(BT(y)).max())
            dual = float(y.sum()) * (min(1.0, 1.0 / z) if z > 0 else 1.0)
            if primal < best[0]:
                best = (primal, g / cmin, best[2])
            if dual > best[2]:
                best = (best[0], best[1], dual)
            gap = best[0] - best[2]
            if log is not None:
                log(it, best[0], best[2])
            if math.isfinite(best[0]) and gap <= problem.tol * max(1.0, best[0]):
                converged = True
                break
    value, g_best, dual = best
    if g_best is None:
        g_best = np.zeros(model.shape)
    f = g_best / w
    sg, tg = problem.sgrid, problem.tgrid
    psi = backward_psi(f, sg, tg)
    cons = constraint_values(problem, psi, model.rows)
    return CapacityResult(
        value=float(np.abs(f).sum() * w) if math.isfinite(value) else math.inf,
        certificate_psi=psi,
        residual_f=f,
        hausdorff=hausdorff_measure(problem.K),
        iterations=it,
        gap=float(value - dual),
        dual_value=float(dual),
        converged=converged,
        constraint_violation=float(max(0.0, 1.0 - cons.min())),
        min_psi=float(psi.min()),
        n_constraints=model.n_constraints,
        seconds=time.perf_counter() - t0,
    )


def dense_constraint_matrix(problem: CapacityProblem) -> np.ndarray:
    """Constraint matrix built column by column with tridiagonal solves.

    Independent of the sine-transform route used by :func:`solve_capacity`.
    """
    sg, tg = problem.sgrid, problem.tgrid
    n_unknowns = sg.nx * tg.nt
    if n_unknowns > LP_MAX_UNKNOWNS:
        raise CapacityError(f"LP oracle is capped at {LP_MAX_UNKNOWNS} unknowns, got {n_unknowns}")
    rows = constraint_nodes(problem) if problem.kind == "initial" else constraint_cells(problem)
    if rows.size == 0:
        raise CapacityError("K resolves to no constraint")
    A = np.empty((rows.size, n_unknowns))
    e = np.zeros((tg.nt, sg.nx))
    for col in range(n_unknowns):
        e.flat[col] = 1.0
        A[:, col] = constraint_values(problem, backward_psi(e, sg, tg), rows)
        e.flat[col] = 0.0
    return A


def lp_oracle(problem: CapacityProblem) -> float:
    """Exact LP value via ``f = f+ - f-`` and the HiGHS dual simplex (tiny grids only)."""
    A = dense_constraint_matrix(problem)
    w = problem.sgrid.dx * problem.tgrid.dt
    m, n = A.shape
    c = np.full(2 * n, w)
    A_ub = -np.hstack([A, -A])
    res = linprog(c, A_ub=A_ub, b_ub=-np.ones(m), bounds=(0, None), method="highs-ds")
    if res.status != 0:
        raise CapacityError(f"LP oracle failed: {res.message}")
    return float(res.fun)
