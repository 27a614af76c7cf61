"""Acceptance criteria, each run at its stated tolerance and time budget.

Every test appends one PASS/FAIL line to the summary printed at the end of
the session, then asserts. Run alone with ``pytest tests/test_acceptance.py``
(about 15 minutes on one core).
"""

import json
import time

import numpy as np
import pytest
import yaml

from rml.campaigns import SUITES, CampaignSettings, algebra_laws, random_intervals, run_campaign, run_suite
from rml.capacity import CapacityError, CapacityProblem, lp_oracle, solve_capacity
from rml.cli import main
from rml.grids import SpaceGrid, TimeGrid
from rml.measures import GridMeasure, total_mass, tv_distance
from rml.nonlinearity import NonlinearitySpec
from rml.relaxation import goodness_from, reduced_measure

SEED = 42


def record(acceptance, name, ok, detail):
    acceptance.append(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    return ok


def capacity(kind, K, nx, nt, T=0.5):
    t0 = time.perf_counter()
    res = solve_capacity(CapacityProblem(kind, K, SpaceGrid(-1.0, 1.0, nx), TimeGrid(T, nt)))
    return res, time.perf_counter() - t0


def test_initial_capacity_identity(acceptance):
    K = ((-0.25, 0.25),)
    coarse, s1 = capacity("initial", K, 129, 128)
    fine, s2 = capacity("initial", K, 257, 256)
    e1, e2 = abs(coarse.value - 0.5) / 0.5, abs(fine.value - 0.5) / 0.5
    ok = e1 <= 0.10 and e2 <= 0.05 and max(s1, s2) <= 120 and coarse.converged and fine.converged
    detail = f"rel. error {e1:.4f} at 129x128 ({s1:.0f} s), {e2:.4f} at 257x256 ({s2:.0f} s)"
    assert record(acceptance, "initial capacity equals length", ok, detail)


def test_lateral_capacity_identity(acceptance):
    K = ((0.1, 0.3),)
    coarse, s1 = capacity("lateral", K, 65, 128)
    mid, s2 = capacity("lateral", K, 129, 256)
    fine, s3 = capacity("lateral", K, 257, 512)
    errs = [abs(r.value - 0.2) / 0.2 for r in (coarse, mid, fine)]
    ok = errs[1] <= 0.10 and errs[0] > errs[1] > errs[2] and max(s1, s2, s3) <= 120
    detail = "rel. errors " + ", ".join(f"{e:.4f}" for e in errs) + f" at 65x128, 129x256, 257x512 (max {max(s1, s2, s3):.0f} s)"
    assert record(acceptance, "lateral capacity equals time length", ok, detail)


def test_lp_oracle_equivalence(acceptance):
    rng = np.random.default_rng(SEED)
    sg, tg = SpaceGrid(-1.0, 1.0, 31), TimeGrid(0.5, 48)  # 1488 unknowns
    t0 = time.perf_counter()
    worst, n = 0.0, 0
    while n < 12:
        kind = "initial" if n % 3 else "lateral"
        if kind == "initial":
            K = tuple((max(a, -0.8), min(b, 0.8)) for a, b in random_intervals(rng, sg))
        else:
            a = float(rng.uniform(0.02, 0.4))
            K = ((a, a + float(rng.uniform(0.02, 0.1))),)
        try:
            p = CapacityProblem(kind, K, sg, tg, tol=1e-6)
            v = solve_capacity(p).value
            ref = lp_oracle(p)
        except CapacityError:
            continue
        worst = max(worst, abs(v - ref) / max(1.0, ref))
        n += 1
    seconds = time.perf_counter() - t0
    ok = worst <= 1e-3 and seconds <= 300
    assert record(acceptance, "solver agrees with LP oracle", ok, f"{n} sets, worst scaled gap {worst:.2e} ({seconds:.0f} s)")


def sweep(tmp_path, name, p, sweep_block):
    cfg = {"T": 0.25, "measure": {"atoms": [{"loc": 0.0, "mass": 1.0}]}, "g": {"kind": "power", "p": p}, "sweep": sweep_block}
    path = tmp_path / f"{name}.yaml"
    path.write_text(yaml.safe_dump(cfg))
    t0 = time.perf_counter()
    code = main(["sweep", "--config", str(path), "--out", str(tmp_path / name)])
    res = json.loads((tmp_path / name / "results.json").read_text())["results"]
    return code, res, time.perf_counter() - t0


def test_dirac_dichotomy(acceptance, tmp_path):
    _, sub, s_sub = sweep(tmp_path, "p2", 2, {"axis": "both", "k": [1e6], "grids": [[799, 1600]]})
    grids = [[199, 400], [399, 800], [799, 1600]]
    _, sup, s_sup = sweep(tmp_path, "p4", 4, {"axis": "both", "k": [1e4, 1e5, 1e6], "grids": grids})
    m2 = sub["cells"][0]["mass"]
    m4 = next(c["mass"] for c in sup["cells"] if c["k"] == 1e6 and c["nx"] == 799)
    joint = [c[3] for c in sup["trends"]["joint_cells"]]
    ok = m2 >= 0.9 and m4 <= 0.2 and sup["trends"]["joint"] == "strictly-decreasing" and max(s_sub, s_sup) <= 600
    detail = (
        f"u^2 mass {m2:.4f} (need >= 0.9); u^4 mass {m4:.4f} (need <= 0.2); "
        f"joint sweep {', '.join(f'{v:.4f}' for v in joint)} ({sup['trends']['joint']}); {s_sup:.0f} s"
    )
    assert record(acceptance, "Dirac data: u^2 keeps mass, u^4 loses it", ok, detail)


def test_absolutely_continuous_data_is_good(acceptance):
    sg, tg = SpaceGrid(-1.0, 1.0, 399), TimeGrid(0.25, 400)
    m = GridMeasure.uniform(sg, 0.5)
    t0 = time.perf_counter()
    r = reduced_measure(m, NonlinearitySpec("power", p=4.0), sg=sg, tg=tg, keep_field=False)
    v = goodness_from(r)
    rel = tv_distance(r.limit_trace, m) / total_mass(m)
    seconds = time.perf_counter() - t0
    ok = v.verdict == "good" and rel <= 0.02 and seconds <= 180
    assert record(acceptance, "uniform density is good for u^4", ok, f"verdict {v.verdict}, TV/mass {rel:.2e} ({seconds:.0f} s)")


@pytest.fixture(scope="module")
def comparison_records():
    return run_suite("comparison", CampaignSettings(seed=SEED, cases=100))


@pytest.fixture(scope="module")
def structure_report():
    suites = tuple(s for s in SUITES if s != "comparison")
    return run_campaign(CampaignSettings(seed=SEED, cases=50), suites, algebra_cases=0)


def test_exact_comparison(acceptance, comparison_records):
    violations = sum(int(r["metrics"]["violations"]) for r in comparison_records)
    ok = len(comparison_records) == 100 and violations == 0
    assert record(acceptance, "exact discrete comparison", ok, f"{len(comparison_records)} ordered pairs, {violations} violations")


def test_structure_suites(acceptance, structure_report):
    suites = structure_report["suites"]
    seconds = sum(structure_report["timings"].values())
    ok = all(s["all_pass"] for s in suites.values()) and seconds <= 1800
    detail = ", ".join(f"{name} {s['passed']}/{s['cases']}" for name, s in suites.items()) + f" ({seconds:.0f} s)"
    assert record(acceptance, "structure suites", ok, detail)


def test_mass_balance_everywhere(acceptance, comparison_records, structure_report):
    records = comparison_records + structure_report["records"]
    worst = max(r["max_balance_residual"] for r in records)
    ok = worst <= 1e-10
    assert record(acceptance, "mass balance", ok, f"worst relative residual {worst:.2e} over {len(records)} cases")


def test_measure_algebra_laws(acceptance):
    t0 = time.perf_counter()
    res = algebra_laws(SEED, 1000, SpaceGrid(-1.0, 1.0, 99))
    seconds = time.perf_counter() - t0
    ok = res["all_pass"] and seconds <= 10
    assert record(acceptance, "measure algebra laws", ok, f"{res['cases']} cases, violations {res['violations'] or 'none'} ({seconds:.1f} s)")
