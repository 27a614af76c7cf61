"""Seeded property campaigns over random measures.

Every case draws its own generator from ``(seed, suite, index)`` so a case
can be rerun alone and results do not depend on the worker count.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from rml.grids import SpaceGrid, TimeGrid
from rml.measures import (
    GridMeasure,
    complement_intervals,
    lebesgue_decompose,
    measure_inf,
    measure_leq,
    measure_restrict,
    measure_sup,
    positive_part_mass,
    total_mass,
    tv_distance,
)
from rml.nonlinearity import NonlinearitySpec
from rml.pde import mass_balance, solve_truncated
from rml.relaxation import DEFAULT_SCHEDULE, reduced_measure

SUITES = ("comparison", "monotonicity", "contraction", "lattice", "restriction", "additivity", "defect")
SUITE_IDS = {name: i for i, name in enumerate(SUITES + ("algebra",))}

CATALOGUE = (
    NonlinearitySpec("power", p=1.5),
    NonlinearitySpec("power", p=2.0),
    NonlinearitySpec("power", p=4.0),
    NonlinearitySpec("exponential", a=1.0),
    NonlinearitySpec("table", table=((0.0, 0.0), (1.0, 1.0), (2.0, 4.0), (4.0, 16.0))),
)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("RML_THREADS", "1")))
    except ValueError:
        return 1


def worker_map(fn, items):
    """``map`` through a process pool capped by RML_THREADS; serial for one worker."""
    items = list(items)
    n = min(worker_count(), len(items))
    if n <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class CampaignSettings:
    seed: int = 0
    cases: int = 50
    nx: int = 99
    nt: int = 400
    T: float = 0.25
    xL: float = -1.0
    xR: float = 1.0
    schedule: tuple = DEFAULT_SCHEDULE
    tol_frac: float = 0.05
    defect_frac: float = 0.02

    @property
    def sgrid(self) -> SpaceGrid:
        return SpaceGrid(self.xL, self.xR, self.nx)

    @property
    def tgrid(self) -> TimeGrid:
        return TimeGrid(self.T, self.nt)


def case_rng(seed: int, suite: str, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, SUITE_IDS[suite], index])


# sampling


MIN_SEPARATION = 0.15  # in units of the domain length; keeps atoms resolvable by the hat basis


def random_atoms(rng, sg: SpaceGrid, n: int | None = None, locs=None, avoid=()):
    """Up to three atoms in the inner 80% of the domain, masses in [0.1, 2]."""
    if locs is None:
        n = int(rng.integers(0, 4)) if n is None else n
        lo, hi = sg.x_left + 0.1 * sg.length, sg.x_right - 0.1 * sg.length
        sep = MIN_SEPARATION * sg.length
        locs = []
        # bounded rejection: a crowded domain yields fewer atoms
        for _ in range(50 * n):
            if len(locs) == n:
                break
            x = float(rng.uniform(lo, hi))
            if all(abs(x - y) >= sep for y in (*locs, *avoid)):
                locs.append(x)
    return tuple((x, float(rng.uniform(0.1, 2.0))) for x in locs)


def random_density(rng, sg: SpaceGrid) -> np.ndarray:
    """One or two smooth compact bumps with random centre, width and mass."""
    lo, hi = sg.x_left + 0.1 * sg.length, sg.x_right - 0.1 * sg.length
    parts = []
    for _ in range(int(rng.integers(1, 3))):
        c = rng.uniform(lo, hi)
        w = rng.uniform(0.25, 0.5) * sg.length
        mass = rng.uniform(0.2, 1.5)
        # (1 - s^2)^2 on |s| < 1 integrates to 16/15 w
        parts.append((c, w, mass * 15.0 / (16.0 * w)))

    def f(x):
        out = np.zeros_like(x)
        for c, w, amp in parts:
            s = np.clip((x - c) / w, -1.0, 1.0)
            out += amp * (1.0 - s**2) ** 2
        return out

    return GridMeasure.from_function(sg, f).density.copy()


def random_measure(rng, sg: SpaceGrid, atoms: bool = True, density: bool = True, locs=None, avoid=()) -> GridMeasure:
    a = random_atoms(rng, sg, locs=locs, avoid=avoid) if atoms else ()
    d = random_density(rng, sg) if density else None
    return GridMeasure(sg, a, d)


def random_g(rng) -> NonlinearitySpec:
    return CATALOGUE[int(rng.integers(len(CATALOGUE)))]


def random_intervals(rng, sg: SpaceGrid):
    """One or two disjoint intervals inside the domain."""
    n = int(rng.integers(1, 3))
    pts = np.sort(rng.uniform(sg.x_left, sg.x_right, 2 * n))
    return [(float(pts[2 * i]), float(pts[2 * i + 1])) for i in range(n)]


# case runners: each returns a plain dict record


def _reduce(m, g, s: CampaignSettings):
    r = reduced_measure(m, g, s.schedule, s.sgrid, s.tgrid, keep_field=False)
    return r.limit_trace, r.max_balance_residual, r.flagged


def _record(suite, index, g, metrics: dict, tol: float, balance: float, flagged: bool, passed: bool | None = None):
    ok = all(v <= tol for v in metrics.values()) if passed is None else passed
    return {
        "suite": suite,
        "case": index,
        "g": g.label,
        "metrics": {k: float(v) for k, v in metrics.items()},
        "tol": float(tol),
        "pass": bool(ok),
        "max_balance_residual": float(balance),
        "flagged": bool(flagged),
    }


def case_comparison(s: CampaignSettings, index: int) -> dict:
    """u_1 <= u_2 at every node and step for mu_1 = c mu_2, no tolerance."""
    rng = case_rng(s.seed, "comparison", index)
    sg, tg = s.sgrid, s.tgrid
    m2 = random_measure(rng, sg)
    m1 = m2.scale(float(rng.uniform(0.1, 0.95)))
    g = random_g(rng).truncated(4.0 ** int(rng.integers(0, 11)))
    f1, f2 = solve_truncated(m1, g, sg, tg), solve_truncated(m2, g, sg, tg)
    violations = int(np.count_nonzero(f1.values > f2.values))
    bal = max(mass_balance(f, g).relative_residual() for f in (f1, f2))
    return _record("comparison", index, g, {"violations": violations}, 0.0, bal, False, violations == 0)


def case_monotonicity(s: CampaignSettings, index: int) -> dict:
    rng = case_rng(s.seed, "monotonicity", index)
    m2 = random_measure(rng, s.sgrid)
    m1 = m2.scale(float(rng.uniform(0.2, 0.9)))
    g = random_g(rng)
    r1, b1, fl1 = _reduce(m1, g, s)
    r2, b2, fl2 = _reduce(m2, g, s)
    metrics = {
        "order_excess": positive_part_mass(r1, r2),
        "mass_form_excess": (total_mass(r2) - total_mass(r1)) - (total_mass(m2) - total_mass(m1)),
    }
    return _record("monotonicity", index, g, metrics, s.tol_frac * total_mass(m2), max(b1, b2), fl1 or fl2)


def _pair(rng, sg):
    mu = random_measure(rng, sg)
    # half the pairs share atom locations so inf keeps atoms
    shared = mu.atom_locations.tolist() if rng.random() < 0.5 else None
    nu = random_measure(rng, sg, locs=shared, avoid=mu.atom_locations.tolist())
    return mu, nu


def case_contraction(s: CampaignSettings, index: int) -> dict:
    rng = case_rng(s.seed, "contraction", index)
    mu, nu = _pair(rng, s.sgrid)
    g = random_g(rng)
    rm, b1, fl1 = _reduce(mu, g, s)
    rn, b2, fl2 = _reduce(nu, g, s)
    metrics = {"tv_excess": tv_distance(rm, rn) - tv_distance(mu, nu)}
    tol = s.tol_frac * max(total_mass(mu), total_mass(nu))
    return _record("contraction", index, g, metrics, tol, max(b1, b2), fl1 or fl2)


def case_lattice(s: CampaignSettings, index: int) -> dict:
    rng = case_rng(s.seed, "lattice", index)
    mu, nu = _pair(rng, s.sgrid)
    g = random_g(rng)
    runs = [_reduce(m, g, s) for m in (mu, nu, measure_inf(mu, nu), measure_sup(mu, nu))]
    rm, rn, ri, rs = (r[0] for r in runs)
    metrics = {
        "inf_error": tv_distance(ri, measure_inf(rm, rn)),
        "sup_error": tv_distance(rs, measure_sup(rm, rn)),
    }
    tol = s.tol_frac * max(total_mass(mu), total_mass(nu))
    return _record("lattice", index, g, metrics, tol, max(r[1] for r in runs), any(r[2] for r in runs))


def case_restriction(s: CampaignSettings, index: int) -> dict:
    rng = case_rng(s.seed, "restriction", index)
    mu = random_measure(rng, s.sgrid)
    E = random_intervals(rng, s.sgrid)
    g = random_g(rng)
    r, b1, fl1 = _reduce(mu, g, s)
    re, b2, fl2 = _reduce(measure_restrict(mu, E), g, s)
    metrics = {"restriction_error": tv_distance(measure_restrict(r, E), re)}
    return _record("restriction", index, g, metrics, s.tol_frac * total_mass(mu), max(b1, b2), fl1 or fl2)


def case_additivity(s: CampaignSettings, index: int) -> dict:
    rng = case_rng(s.seed, "additivity", index)
    sg = s.sgrid
    atoms = GridMeasure(sg, random_atoms(rng, sg, n=int(rng.integers(1, 4))))
    dens = GridMeasure(sg, (), random_density(rng, sg))
    g = random_g(rng)
    runs = [_reduce(m, g, s) for m in (atoms, dens, atoms + dens)]
    metrics = {"additivity_error": tv_distance(runs[2][0], runs[0][0] + runs[1][0])}
    tol = s.tol_frac * total_mass(atoms + dens)
    return _record("additivity", index, g, metrics, tol, max(r[1] for r in runs), any(r[2] for r in runs))


def case_defect(s: CampaignSettings, index: int) -> dict:
    """The defect lives on the atoms: the density part comes back unchanged."""
    rng = case_rng(s.seed, "defect", index)
    mu = random_measure(rng, s.sgrid)
    g = random_g(rng)
    r, b, fl = _reduce(mu, g, s)
    ac, _ = lebesgue_decompose(r)
    mu_ac, _ = lebesgue_decompose(mu)
    metrics = {"density_error": tv_distance(ac, mu_ac)}
    return _record("defect", index, g, metrics, s.defect_frac * total_mass(mu), b, fl)


CASES = {
    "comparison": case_comparison,
    "monotonicity": case_monotonicity,
    "contraction": case_contraction,
    "lattice": case_lattice,
    "restriction": case_restriction,
    "additivity": case_additivity,
    "defect": case_defect,
}


def _run_case(job):
    suite, settings, index = job
    return CASES[suite](settings, index)


def run_suite(suite: str, settings: CampaignSettings) -> list[dict]:
    return worker_map(_run_case, [(suite, settings, i) for i in range(settings.cases)])


def summarize(records: list[dict]) -> dict:
    failed = [r["case"] for r in records if not r["pass"]]
    worst = {}
    for r in records:
        for k, v in r["metrics"].items():
            ratio = v / r["tol"] if r["tol"] > 0 else (math.inf if v > 0 else 0.0)
            worst[k] = max(worst.get(k, -math.inf), ratio)
    return {
        "cases": len(records),
        "passed": len(records) - len(failed),
        "failed_cases": failed,
        "all_pass": not failed,
        "worst_metric_over_tol": worst,
        "max_balance_residual": max((r["max_balance_residual"] for r in records), default=0.0),
        "flagged_cases": [r["case"] for r in records if r["flagged"]],
    }


def run_campaign(settings: CampaignSettings, suites=SUITES, algebra_cases: int = 1000) -> dict:
    """All suites plus the measure-algebra laws; per-case records and summaries."""
    report = {"settings": {**asdict(settings), "schedule": list(settings.schedule)}, "suites": {}, "records": [], "timings": {}}
    for suite in suites:
        t0 = time.perf_counter()
        recs = run_suite(suite, settings)
        report["timings"][suite] = time.perf_counter() - t0
        report["records"].extend(recs)
        report["suites"][suite] = summarize(recs)
    if algebra_cases:
        t0 = time.perf_counter()
        alg = algebra_laws(settings.seed, algebra_cases, settings.sgrid)
        report["timings"]["algebra"] = time.perf_counter() - t0
        report["suites"]["algebra"] = alg
    return report


# exact measure-algebra laws


def _same(a: GridMeasure, b: GridMeasure) -> bool:
    return a == b


def algebra_case(rng, sg: SpaceGrid) -> list[str]:
    """Check the exact lattice/restriction/decomposition laws on three random measures.

    Returns the names of violated laws (empty when all hold).
    """
    pool = [float(x) for x in rng.uniform(sg.x_left, sg.x_right, 4)]

    def draw():
        locs = [x for x in pool if rng.random() < 0.5]
        d = rng.random(sg.ncells) * (rng.random(sg.ncells) < 0.7) * rng.uniform(0, 3)
        return GridMeasure(sg, random_atoms(rng, sg, locs=locs), d)

    a, b, c = draw(), draw(), draw()
    sup, inf = measure_sup, measure_inf
    bad = []
    checks = {
        "sup_commutative": _same(sup(a, b), sup(b, a)),
        "inf_commutative": _same(inf(a, b), inf(b, a)),
        "sup_associative": _same(sup(sup(a, b), c), sup(a, sup(b, c))),
        "inf_associative": _same(inf(inf(a, b), c), inf(a, inf(b, c))),
        "sup_idempotent": _same(sup(a, a), a),
        "inf_idempotent": _same(inf(a, a), a),
        "inf_below": measure_leq(inf(a, b), a) and measure_leq(inf(a, b), b),
        "sup_above": measure_leq(a, sup(a, b)) and measure_leq(b, sup(a, b)),
        "sup_plus_inf_cells": np.array_equal(sup(a, b).density + inf(a, b).density, a.density + b.density),
        "sup_plus_inf_atoms": dict((sup(a, b) + inf(a, b)).atoms) == dict((a + b).atoms),
        "sup_plus_inf_mass": math.isclose(total_mass(sup(a, b)) + total_mass(inf(a, b)), total_mass(a) + total_mass(b), rel_tol=1e-12),
    }
    E = random_intervals(rng, sg)
    parts = measure_restrict(a, E) + measure_restrict(a, complement_intervals(E, sg), closed=False)
    checks["restrict_additive"] = math.isclose(total_mass(parts), total_mass(a), rel_tol=1e-12, abs_tol=1e-300)
    ac, sing = lebesgue_decompose(a)
    checks["decompose_identity"] = _same(ac + sing, a)
    checks["mutually_singular"] = total_mass(inf(ac, sing)) == 0.0
    bad.extend(k for k, ok in checks.items() if not ok)
    return bad


def algebra_laws(seed: int, cases: int, sg: SpaceGrid) -> dict:
    violations = {}
    for i in range(cases):
        for law in algebra_case(case_rng(seed, "algebra", i), sg):
            violations.setdefault(law, []).append(i)
    return {"cases": cases, "violations": violations, "all_pass": not violations}
