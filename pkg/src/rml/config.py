"""Experiment configuration: parsing, validation and measure literals.

Configs are YAML or JSON key-value trees. Every defaulted field is filled in
here, so the echoed config in a manifest is the full provenance of a run.
"""

from __future__ import annotations

import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from rml.capacity import KINDS as CAPACITY_KINDS
from rml.grids import GridError, SpaceGrid, TimeGrid
from rml.measures import ENDPOINTS, BoundaryMeasure, GridMeasure, MeasureError
from rml.nonlinearity import NonlinearityError, NonlinearitySpec


class ConfigError(ValueError):
    pass


_NUM = r"\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*"
_UNIFORM = re.compile(rf"^uniform\({_NUM}\)$")
_GAUSSIAN = re.compile(rf"^gaussian\({_NUM},{_NUM},{_NUM}\)$")


def parse_density(spec, grid) -> np.ndarray:
    """``"zero"``, ``"uniform(c)"``, ``"gaussian(center,sigma,mass)"`` or a list of cell values."""
    if isinstance(spec, str):
        s = spec.strip().replace(" ", "")
        if s == "zero":
            return np.zeros(grid.ncells)
        if m := _UNIFORM.match(s):
            return GridMeasure.uniform(grid, float(m.group(1))).density.copy()
        if m := _GAUSSIAN.match(s):
            c, sigma, mass = (float(v) for v in m.groups())
            if sigma <= 0 or mass < 0:
                raise ConfigError(f"gaussian density needs sigma > 0 and mass >= 0: {spec!r}")
            return GridMeasure.gaussian(grid, c, sigma, mass).density.copy()
        raise ConfigError(f"unknown density profile {spec!r}")
    if isinstance(spec, (list, tuple)):
        vals = np.asarray(spec, dtype=float)
        if vals.shape != (grid.ncells,):
            raise ConfigError(f"explicit density needs {grid.ncells} cell values, got {vals.size}")
        return vals
    raise ConfigError(f"density must be a profile name or a list, got {type(spec).__name__}")


def parse_measure(spec, grid, loc_key: str = "loc") -> GridMeasure:
    if spec is None:
        return GridMeasure.zero(grid)
    if not isinstance(spec, dict):
        raise ConfigError("measure must be a mapping with 'atoms' and/or 'density'")
    unknown = set(spec) - {"atoms", "density"}
    if unknown:
        raise ConfigError(f"unknown measure keys {sorted(unknown)}")
    atoms = []
    for a in spec.get("atoms") or []:
        try:
            atoms.append((float(a[loc_key]), float(a["mass"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"atom entries need '{loc_key}' and 'mass': {a!r}") from exc
    density = parse_density(spec.get("density", "zero"), grid)
    try:
        return GridMeasure(grid, tuple(atoms), density)
    except MeasureError as exc:
        raise ConfigError(str(exc)) from exc


def parse_boundary(spec, tg: TimeGrid) -> BoundaryMeasure:
    if not isinstance(spec, dict) or not spec:
        raise ConfigError("boundary must map endpoints ('left', 'right') to measures")
    unknown = set(spec) - set(ENDPOINTS)
    if unknown:
        raise ConfigError(f"unknown endpoint(s) {sorted(unknown)}")
    return BoundaryMeasure(tg, {e: parse_measure(spec[e], tg, loc_key="time") for e in spec})


def parse_g(spec) -> NonlinearitySpec:
    if spec is None:
        return NonlinearitySpec("zero")
    if not isinstance(spec, dict):
        raise ConfigError("g must be a mapping with a 'kind'")
    kw = dict(spec)
    if "table" in kw:
        kw["table"] = tuple(tuple(map(float, row)) for row in kw["table"])
    try:
        return NonlinearitySpec(**kw)
    except TypeError as exc:
        raise ConfigError(f"bad g spec: {exc}") from exc
    except NonlinearityError as exc:
        raise ConfigError(str(exc)) from exc


def parse_schedule(spec) -> list[float]:
    if spec is None:
        return [float(4**j) for j in range(11)]
    if isinstance(spec, dict):
        base = float(spec.get("base", 4))
        levels = int(spec.get("levels", 11))
        start = int(spec.get("start", 0))
        sched = [base ** (start + j) for j in range(levels)]
    else:
        sched = [float(k) for k in spec]
    if len(sched) < 4 or any(b <= a for a, b in zip(sched, sched[1:])) or sched[0] <= 0:
        raise ConfigError("schedule must be positive, strictly increasing, with at least 4 levels")
    return sched


@dataclass
class ExperimentConfig:
    xL: float = -1.0
    xR: float = 1.0
    nx: int = 399
    nt: int = 400
    T: float = 0.25
    measure: Any = None
    boundary: Any = None
    g: dict = field(default_factory=lambda: {"kind": "zero"})
    schedule: list = field(default_factory=lambda: [float(4**j) for j in range(11)])
    tolerances: dict = field(default_factory=lambda: {"verdict": None})
    seed: int = 0
    sweep: dict | None = None
    capacity: dict | None = None

    @property
    def sgrid(self) -> SpaceGrid:
        return SpaceGrid(self.xL, self.xR, self.nx)

    @property
    def tgrid(self) -> TimeGrid:
        return TimeGrid(self.T, self.nt)

    def g_spec(self) -> NonlinearitySpec:
        return parse_g(self.g)

    def initial_measure(self) -> GridMeasure:
        return parse_measure(self.measure, self.sgrid)

    def boundary_measure(self) -> BoundaryMeasure:
        return parse_boundary(self.boundary, self.tgrid)

    def echo(self) -> dict:
        return asdict(self)


TOP_KEYS = {"domain", "grid", "T", "measure", "boundary", "g", "schedule", "tolerances", "seed", "sweep", "capacity"}


def from_dict(raw: dict) -> ExperimentConfig:
    """Validate a raw tree and fill defaults. Raises ConfigError on any problem."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    unknown = set(raw) - TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    dom = raw.get("domain") or {}
    grid = raw.get("grid") or {}
    try:
        cfg = ExperimentConfig(
            xL=float(dom.get("xL", -1.0)),
            xR=float(dom.get("xR", 1.0)),
            nx=int(grid.get("nx", 399)),
            nt=int(grid.get("nt", 400)),
            T=float(raw.get("T", 0.25)),
            measure=raw.get("measure"),
            boundary=raw.get("boundary"),
            g=dict(raw.get("g") or {"kind": "zero"}),
            schedule=parse_schedule(raw.get("schedule")),
            tolerances={"verdict": None, **(raw.get("tolerances") or {})},
            seed=int(raw.get("seed", 0)),
            sweep=raw.get("sweep"),
            capacity=raw.get("capacity"),
        )
    except (TypeError, ValueError, AttributeError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"malformed config: {exc}") from exc
    try:
        cfg.sgrid, cfg.tgrid
    except GridError as exc:
        raise ConfigError(str(exc)) from exc
    parse_g(cfg.g)
    if cfg.measure is not None:
        cfg.initial_measure()
    if cfg.boundary is not None:
        cfg.boundary_measure()
    if cfg.capacity is not None:
        kind = cfg.capacity.get("kind")
        if kind not in CAPACITY_KINDS:
            raise ConfigError(f"capacity kind must be one of {CAPACITY_KINDS}")
    return cfg


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        raw = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {p.name}: {str(exc).splitlines()[0]}") from exc
    return from_dict(raw)
