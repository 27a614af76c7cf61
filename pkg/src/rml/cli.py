"""Command-line runner: relax, brelax, capacity, properties, sweep.

Every subcommand writes a ``results.json`` manifest (echoed inputs, versions,
verdicts, with wall-clock numbers kept under ``timings``) plus CSV tables and
plot-ready ``.dat`` files. Exit codes: 0 success, 2 validation error,
3 flagged or non-converged results.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import platform
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import scipy

import rml
from rml.boundary import boundary_goodness, reduced_boundary_measure
from rml.campaigns import SUITES, CampaignSettings, run_campaign, worker_map
from rml.capacity import CapacityError, CapacityProblem, solve_capacity
from rml.config import ConfigError, ExperimentConfig, load_config, parse_g
from rml.grids import GridError, SpaceGrid, TimeGrid
from rml.measures import ENDPOINTS, MeasureError, total_mass
from rml.nonlinearity import NonlinearityError, ReactionSolveError
from rml.pde import SolverError
from rml.relaxation import TraceError, goodness_from, reduced_measure

EXIT_OK, EXIT_INVALID, EXIT_FLAGGED = 0, 2, 3
VALIDATION_ERRORS = (ConfigError, CapacityError, GridError, MeasureError, NonlinearityError, TraceError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# output helpers


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    return obj


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def write_json(path: Path, obj) -> None:
    write_atomic(path, json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n")


def write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    write_atomic(path, buf.getvalue())


def write_dat(path: Path, columns: dict) -> None:
    names = list(columns)
    lines = ["# " + " ".join(names)]
    for row in zip(*columns.values()):
        lines.append(" ".join(f"{float(v):.12g}" for v in row))
    write_atomic(path, "\n".join(lines) + "\n")


def versions() -> dict:
    return {"rml": rml.__version__, "numpy": np.__version__, "scipy": scipy.__version__, "python": platform.python_version()}


def manifest(command: str, inputs: dict, results: dict, flagged: bool, timings: dict) -> dict:
    return {
        "command": command,
        "inputs": inputs,
        "versions": versions(),
        "results": results,
        "flagged": bool(flagged),
        "exit_code": EXIT_FLAGGED if flagged else EXIT_OK,
        "timings": timings,
    }


def _config_or_fail(path) -> ExperimentConfig:
    return load_config(path)


# relax / brelax


def cmd_relax(args) -> int:
    cfg = _config_or_fail(args.config)
    if cfg.measure is None:
        raise ConfigError("relax needs a 'measure' block")
    out = Path(args.out)
    t0 = time.perf_counter()
    m, g = cfg.initial_measure(), cfg.g_spec()
    result = reduced_measure(m, g, cfg.schedule, cfg.sgrid, cfg.tgrid, keep_field=args.dump_fields)
    verdict = goodness_from(result, cfg.tolerances.get("verdict"))
    elapsed = time.perf_counter() - t0
    lim = result.limit_trace
    results = {
        **result.summary(),
        "verdict": verdict.as_dict(),
        "limit_trace": {"atoms": [list(a) for a in lim.atoms], "density_mass": lim.density_mass},
    }
    flagged = result.flagged or verdict.flagged
    pair = result.hat_pairings()
    n = pair.shape[1]
    rows = []
    for lv, p in zip(result.levels, pair):
        rows.append([lv.k, lv.mass, lv.slice_mass, lv.absorption, int(lv.flagged), *p])
    rows.append(["limit", result.limit_mass, "", result.limit_absorption, int(result.flagged), *pair[-1]])
    write_csv(out / "traces.csv", ["k", "mass", "slice_mass", "absorption", "flagged", *[f"hat_{j + 1:02d}" for j in range(n)]], rows)
    write_dat(out / "mass_vs_k.dat", {"k": result.schedule, "mass": result.masses, "slice_mass": result.slice_masses})
    if args.dump_fields:
        _dump_field(out / "final_field.csv", result.final_field)
    write_json(out / "results.json", manifest("relax", cfg.echo(), results, flagged, {"seconds": elapsed}))
    print(f"relax: mass {total_mass(lim):.6g} of {total_mass(m):.6g}, verdict {verdict.verdict}" + (" [flagged]" if flagged else ""))
    return EXIT_FLAGGED if flagged else EXIT_OK


def cmd_brelax(args) -> int:
    cfg = _config_or_fail(args.config)
    if cfg.boundary is None:
        raise ConfigError("brelax needs a 'boundary' block")
    out = Path(args.out)
    t0 = time.perf_counter()
    bm, g = cfg.boundary_measure(), cfg.g_spec()
    result = reduced_boundary_measure(bm, g, cfg.schedule, cfg.sgrid, cfg.tgrid, keep_field=args.dump_fields)
    verdict = boundary_goodness(result, cfg.tolerances.get("verdict"))
    elapsed = time.perf_counter() - t0
    results = {
        **result.summary(),
        "verdict": verdict,
        "limit_trace": {
            e: {"atoms": [list(a) for a in result.limit_trace.parts[e].atoms], "density_mass": result.limit_trace.parts[e].density_mass}
            for e in ENDPOINTS
        },
    }
    n = result.basis.n
    rows = []
    for lv in result.levels:
        for e in ENDPOINTS:
            rows.append([lv.k, e, lv.masses[e], lv.shell_mass, lv.absorption, int(lv.flagged), *lv.pairings[e]])
    write_csv(out / "traces.csv", ["k", "endpoint", "mass", "shell_mass", "absorption", "flagged", *[f"hat_{j + 1:02d}" for j in range(n)]], rows)
    write_dat(out / "mass_vs_k.dat", {"k": result.schedule, "mass": result.masses, "shell_mass": result.shell_masses})
    if args.dump_fields:
        _dump_field(out / "final_field.csv", result.final_field)
    write_json(out / "results.json", manifest("brelax", cfg.echo(), results, result.flagged, {"seconds": elapsed}))
    print(f"brelax: limit mass {results['limit_mass']:.6g} of {results['data_mass']:.6g}, verdict {verdict['verdict']}" + (" [flagged]" if result.flagged else ""))
    return EXIT_FLAGGED if result.flagged else EXIT_OK


def _dump_field(path: Path, f) -> None:
    rows = ([t, *u] for t, u in zip(f.tgrid.times, f.values))
    write_csv(path, ["t", *[f"x{i}" for i in range(f.sgrid.nx)]], rows)


# capacity


def parse_K(text: str):
    """``"a b; c d"`` -> [(a, b), (c, d)]."""
    out = []
    for part in text.split(";"):
        if not part.strip():
            continue
        vals = part.split()
        if len(vals) != 2:
            raise ConfigError(f"each interval in --K needs two numbers, got {part.strip()!r}")
        try:
            a, b = float(vals[0]), float(vals[1])
        except ValueError as exc:
            raise ConfigError(f"bad number in --K: {part.strip()!r}") from exc
        if b < a:
            raise ConfigError(f"interval endpoints out of order in --K: {part.strip()!r}")
        out.append((a, b))
    if not out:
        raise ConfigError("--K is empty")
    return out


def capacity_cell(kind, K, nx, nt, T, endpoint="left", max_iters=200_000, tol=1e-4, xL=-1.0, xR=1.0):
    problem = CapacityProblem(kind, tuple(K), SpaceGrid(xL, xR, nx), TimeGrid(T, nt), endpoint=endpoint, max_iters=max_iters, tol=tol)
    return problem, solve_capacity(problem)


def cmd_capacity(args) -> int:
    K = parse_K(args.K)
    out = Path(args.out)
    problem, res = capacity_cell(args.kind, K, args.nx, args.nt, args.T, args.endpoint, args.max_iters, args.tol)
    summary = res.as_dict()
    seconds = summary.pop("seconds")
    inputs = {"kind": args.kind, "K": K, "nx": args.nx, "nt": args.nt, "T": args.T, "endpoint": args.endpoint, "max_iters": args.max_iters, "tol": args.tol, "domain": [-1.0, 1.0]}
    flagged = not res.converged
    write_json(out / "result.json", {k: summary[k] for k in ("value", "hausdorff", "gap", "iters")})
    write_csv(out / "certificate.csv", ["t", *[f"x{i}" for i in range(args.nx)]], ([t, *row] for t, row in zip(problem.tgrid.times, res.certificate_psi)))
    write_json(out / "results.json", manifest("capacity", inputs, summary, flagged, {"seconds": seconds}))
    print(f"capacity: value {res.value:.6g}, H = {res.hausdorff:.6g}, gap {res.gap:.2e}, {res.iterations} iterations" + (" [not converged]" if flagged else ""))
    return EXIT_FLAGGED if flagged else EXIT_OK


# properties


def cmd_properties(args) -> int:
    if args.cases < 1:
        raise ConfigError("--cases must be positive")
    suites = tuple(s for s in args.suites.split(",") if s) if args.suites else SUITES
    unknown = set(suites) - set(SUITES)
    if unknown:
        raise ConfigError(f"unknown suites {sorted(unknown)}")
    settings = CampaignSettings(seed=args.seed, cases=args.cases, nx=args.nx, nt=args.nt)
    out = Path(args.out)
    report = run_campaign(settings, suites, algebra_cases=args.algebra_cases)
    timings = report.pop("timings")
    records = report.pop("records")
    all_pass = all(s["all_pass"] for s in report["suites"].values())
    flagged = any(s.get("flagged_cases") for s in report["suites"].values())
    report["all_pass"] = all_pass
    metric_names = sorted({k for r in records for k in r["metrics"]})
    write_csv(
        out / "properties.csv",
        ["suite", "case", "g", *metric_names, "tol", "pass", "flagged", "max_balance_residual"],
        ([r["suite"], r["case"], r["g"], *[r["metrics"].get(k, "") for k in metric_names], r["tol"], int(r["pass"]), int(r["flagged"]), r["max_balance_residual"]] for r in records),
    )
    inputs = report.pop("settings")
    inputs.update(suites=list(suites), algebra_cases=args.algebra_cases)
    write_json(out / "results.json", manifest("properties", inputs, report, flagged or not all_pass, timings))
    for name, s in report["suites"].items():
        if name == "algebra":
            print(f"{name:>13}: {'PASS' if s['all_pass'] else 'FAIL'} ({s['cases']} cases, violations: {sorted(s['violations']) or 'none'})")
        else:
            print(f"{name:>13}: {'PASS' if s['all_pass'] else 'FAIL'} ({s['passed']}/{s['cases']})")
    return EXIT_OK if all_pass and not flagged else EXIT_FLAGGED


# sweep


def _ladder_to(k: float, ratio: float = 4.0, floor: float = 0.25) -> list[float]:
    """``k ratio^-j`` down to ``floor`` (at least four levels), so k-sweep cells start equally low."""
    n = max(4, int(math.floor(math.log(k / floor) / math.log(ratio) + 1e-9)) + 1)
    return [k / ratio**j for j in reversed(range(n))]


def _sweep_cell(job):
    kind, raw, k, nx, nt, deadline = job
    if time.time() > deadline:
        return {"k": k, "nx": nx, "nt": nt, "skipped": True}
    t0 = time.perf_counter()
    cfg = ExperimentConfig(**{**raw, "nx": nx, "nt": nt})
    row = {"k": k, "nx": nx, "nt": nt, "skipped": False}
    if kind == "capacity":
        cap = cfg.capacity
        _, res = capacity_cell(cap["kind"], [tuple(i) for i in cap["K"]], nx, nt, cfg.T, cap.get("endpoint", "left"), int(cap.get("max_iters", 200_000)), float(cap.get("tol", 1e-4)), cfg.xL, cfg.xR)
        row.update(value=res.value, hausdorff=res.hausdorff, error=abs(res.value - res.hausdorff) / res.hausdorff, flagged=not res.converged)
    else:
        schedule = cfg.schedule if k is None else _ladder_to(k)
        g = parse_g(cfg.g)
        if kind == "relax":
            r = reduced_measure(cfg.initial_measure(), g, schedule, cfg.sgrid, cfg.tgrid, keep_field=False)
            verdict = goodness_from(r, cfg.tolerances.get("verdict")).verdict
            data = total_mass(r.measure)
            limit = total_mass(r.limit_trace)
        else:
            r = reduced_boundary_measure(cfg.boundary_measure(), g, schedule, cfg.sgrid, cfg.tgrid, keep_field=False)
            verdict = boundary_goodness(r, cfg.tolerances.get("verdict"))["verdict"]
            data = r.summary()["data_mass"]
            limit = r.summary()["limit_mass"]
        # the cell reads u_k at its own k; the ladder's k -> inf estimate is kept beside it
        level = float(r.masses[-1])
        row.update(mass=level, limit_mass=limit, defect=data - level, verdict=verdict, flagged=r.flagged, balance=r.max_balance_residual)
    row["seconds"] = time.perf_counter() - t0
    return row


HALVING_BAND = 0.1


def trend(values) -> str:
    v = np.asarray([x for x in values if x is not None], dtype=float)
    if v.size < 2:
        return "too-short"
    d = np.diff(v)
    if np.all(d < 0):
        return "strictly-decreasing"
    if np.all(d <= 0):
        return "nonincreasing"
    if np.all(d > 0):
        return "strictly-increasing"
    return "not-monotone"


def _sweep_plan(cfg: ExperimentConfig):
    sw = cfg.sweep
    if not isinstance(sw, dict):
        raise ConfigError("sweep needs a 'sweep' block in the config")
    axis = sw.get("axis")
    if axis not in ("k", "grid", "both"):
        raise ConfigError("sweep axis must be one of k, grid, both")
    kind = sw.get("kind", "relax")
    if kind not in ("relax", "brelax", "capacity"):
        raise ConfigError("sweep kind must be relax, brelax or capacity")
    if kind == "capacity" and axis != "grid":
        raise ConfigError("capacity sweeps run along the grid axis only")
    if kind == "capacity" and cfg.capacity is None:
        raise ConfigError("capacity sweep needs a 'capacity' block")
    if kind == "relax" and cfg.measure is None:
        raise ConfigError("relax sweep needs a 'measure' block")
    if kind == "brelax" and cfg.boundary is None:
        raise ConfigError("brelax sweep needs a 'boundary' block")
    ks = [None]
    grids = [(cfg.nx, cfg.nt)]
    if axis in ("k", "both"):
        ks = [float(k) for k in sw.get("k") or []]
        if not ks:
            raise ConfigError("k axis is empty")
        if any(k <= 1 for k in ks):
            raise ConfigError("sweep k values must exceed 1")
    if axis in ("grid", "both"):
        grids = [(int(a), int(b)) for a, b in sw.get("grids") or []]
        if not grids:
            raise ConfigError("grid axis is empty")
        for nx, nt in grids:
            SpaceGrid(cfg.xL, cfg.xR, nx), TimeGrid(cfg.T, nt)
    return kind, axis, ks, grids, float(sw.get("budget_seconds", 3600))


def cmd_sweep(args) -> int:
    cfg = _config_or_fail(args.config)
    kind, axis, ks, grids, budget = _sweep_plan(cfg)
    out = Path(args.out)
    raw = cfg.echo()
    deadline = time.time() + budget
    jobs = [(kind, raw, k, nx, nt, deadline) for (nx, nt) in grids for k in ks]
    t0 = time.perf_counter()
    rows = worker_map(_sweep_cell, jobs)
    elapsed = time.perf_counter() - t0
    partial = any(r["skipped"] for r in rows)
    done = [r for r in rows if not r["skipped"]]
    flagged = partial or any(r.get("flagged") for r in done)
    col = "value" if kind == "capacity" else "mass"
    trends = {}
    if kind == "capacity":
        errs = [r["error"] for r in done]
        ratios = [b / a if a > 0 else None for a, b in zip(errs, errs[1:])]
        trends["error"] = trend(errs)
        trends["error_ratios"] = ratios
        # first-order refinement: each error ratio near 1/2
        trends["halving"] = bool(ratios) and all(q is not None and abs(q - 0.5) <= HALVING_BAND for q in ratios)
    if axis in ("k", "both"):
        trends["k"] = {f"{nx}x{nt}": trend([r[col] for r in done if (r["nx"], r["nt"]) == (nx, nt)]) for nx, nt in grids}
    if axis in ("grid", "both"):
        key = "k" if axis == "both" else None
        trends["grid"] = {str(k): trend([r[col] for r in done if r["k"] == k]) for k in ks} if key else trend([r[col] for r in done])
    if axis == "both" and len(ks) == len(grids):
        diag = [r for r in done for i, (nx, nt) in enumerate(grids) if (r["nx"], r["nt"]) == (nx, nt) and r["k"] == ks[i]]
        trends["joint"] = trend([r[col] for r in diag])
        trends["joint_cells"] = [[r["k"], r["nx"], r["nt"], r[col]] for r in diag]
    fields = ["k", "nx", "nt", "skipped"] + (["value", "hausdorff", "error"] if kind == "capacity" else ["mass", "limit_mass", "defect", "verdict", "balance"]) + ["flagged"]
    write_csv(out / "sweep.csv", fields, ([("" if r.get(f) is None else (int(r[f]) if isinstance(r.get(f), bool) else r[f])) for f in fields] for r in rows))
    if kind == "capacity":
        write_dat(out / "value_vs_refinement.dat", {"nx": [r["nx"] for r in done], "value": [r["value"] for r in done], "error": [r["error"] for r in done]})
    else:
        for nx, nt in grids:
            sel = [r for r in done if (r["nx"], r["nt"]) == (nx, nt) and r["k"] is not None]
            if sel:
                write_dat(out / f"mass_vs_k_{nx}x{nt}.dat", {"k": [r["k"] for r in sel], "mass": [r["mass"] for r in sel]})
        if axis in ("grid", "both"):
            for k in ks:
                sel = [r for r in done if r["k"] == k]
                tag = "" if k is None else f"_k{k:g}"
                write_dat(out / f"mass_vs_refinement{tag}.dat", {"nx": [r["nx"] for r in sel], "mass": [r["mass"] for r in sel]})
    timings = {"seconds": elapsed, "cells": [r.get("seconds") for r in rows]}
    clean_rows = [{k: v for k, v in r.items() if k != "seconds"} for r in rows]
    results = {"kind": kind, "axis": axis, "cells": clean_rows, "trends": trends, "partial": partial}
    write_json(out / "results.json", manifest("sweep", raw, results, flagged, timings))
    print(f"sweep ({kind}, {axis}): {len(done)}/{len(rows)} cells, trends {json.dumps(_clean(trends))}" + (" [partial]" if partial else "") + (" [flagged]" if flagged else ""))
    return EXIT_FLAGGED if flagged else EXIT_OK


# entry point


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rml", description="Reduced-measure experiments for the semilinear heat equation.")
    sub = p.add_subparsers(dest="command", required=True)

    for name, help_ in (("relax", "initial-data truncation ladder and reduced measure"), ("brelax", "lateral-data truncation ladder")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", required=True)
        s.add_argument("--out", default="out")
        s.add_argument("--dump-fields", action="store_true", help="also write the largest-k field as CSV")

    c = sub.add_parser("capacity", help="L1 capacity of a compact set")
    c.add_argument("--kind", choices=("initial", "lateral"), required=True)
    c.add_argument("--K", required=True, help='intervals "a b; c d"')
    c.add_argument("--nx", type=int, default=129)
    c.add_argument("--nt", type=int, default=128)
    c.add_argument("--T", type=float, default=0.5)
    c.add_argument("--endpoint", choices=ENDPOINTS, default="left")
    c.add_argument("--max-iters", type=int, default=200_000)
    c.add_argument("--tol", type=float, default=1e-4)
    c.add_argument("--out", default="out")

    q = sub.add_parser("properties", help="seeded property campaigns")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--cases", type=int, default=50)
    q.add_argument("--suites", default="", help="comma-separated subset of " + ",".join(SUITES))
    q.add_argument("--algebra-cases", type=int, default=1000)
    q.add_argument("--nx", type=int, default=99)
    q.add_argument("--nt", type=int, default=400)
    q.add_argument("--out", default="out")

    w = sub.add_parser("sweep", help="k / grid refinement studies")
    w.add_argument("--config", required=True)
    w.add_argument("--out", default="out")
    return p


COMMANDS = {"relax": cmd_relax, "brelax": cmd_brelax, "capacity": cmd_capacity, "properties": cmd_properties, "sweep": cmd_sweep}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"rml: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except VALIDATION_ERRORS as exc:
        print(f"rml: error: {str(exc).splitlines()[0] if str(exc) else type(exc).__name__}", file=sys.stderr)
        return EXIT_INVALID
    except (SolverError, ReactionSolveError) as exc:
        print(f"rml: solver failure: {exc}", file=sys.stderr)
        return EXIT_FLAGGED


run = main

if __name__ == "__main__":
    sys.exit(main())
