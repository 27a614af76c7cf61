"""Positive Radon measures on an interval: finitely many atoms plus a cellwise density.

The atom list is the singular part and the density is the absolutely
continuous part, so the Lebesgue decomposition is structural. The same class
serves measures in space (on a :class:`SpaceGrid`) and on the time axis of a
lateral boundary endpoint (on a :class:`TimeGrid`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from rml.grids import GridError, SpaceGrid, TimeGrid, check_same_grid

Intervals = Sequence[tuple[float, float]]


class MeasureError(ValueError):
    pass


def _canonical_atoms(atoms: Iterable[tuple[float, float]], grid) -> tuple[tuple[float, float], ...]:
    merged: dict[float, float] = {}
    for loc, mass in atoms:
        loc, mass = float(loc), float(mass)
        if not np.isfinite(mass) or mass < 0:
            raise MeasureError(f"atom mass must be finite and >= 0, got {mass} at {loc}")
        if not grid.contains_open(loc):
            raise MeasureError(f"atom location {loc} not inside ({grid.lo}, {grid.hi})")
        # exact coordinate equality merges; near-coincident atoms stay distinct
        merged[loc] = merged.get(loc, 0.0) + mass
    return tuple((loc, m) for loc, m in sorted(merged.items()) if m > 0.0)


@dataclass(frozen=True, eq=False)
class GridMeasure:
    """Atoms ``(location, mass)`` plus density averages on the grid cells.

    Zero-mass atoms are dropped at construction so equal measures have equal
    atom lists.
    """

    grid: SpaceGrid | TimeGrid
    atoms: tuple[tuple[float, float], ...] = ()
    density: np.ndarray = field(default=None)

    def __post_init__(self):
        dens = np.zeros(self.grid.ncells) if self.density is None else np.array(self.density, dtype=float)
        if dens.shape != (self.grid.ncells,):
            raise MeasureError(f"density needs {self.grid.ncells} cell values, got shape {dens.shape}")
        if not np.all(np.isfinite(dens)) or np.any(dens < 0):
            raise MeasureError("density must be finite and nonnegative")
        dens.setflags(write=False)
        object.__setattr__(self, "density", dens)
        object.__setattr__(self, "atoms", _canonical_atoms(self.atoms, self.grid))

    # construction helpers

    @classmethod
    def zero(cls, grid) -> "GridMeasure":
        return cls(grid)

    @classmethod
    def dirac(cls, grid, loc: float, mass: float = 1.0) -> "GridMeasure":
        return cls(grid, ((loc, mass),))

    @classmethod
    def uniform(cls, grid, c: float) -> "GridMeasure":
        return cls(grid, (), np.full(grid.ncells, float(c)))

    @classmethod
    def from_function(cls, grid, f: Callable[[np.ndarray], np.ndarray], atoms=(), nsub: int = 8) -> "GridMeasure":
        """Cell averages of ``f`` by ``nsub``-point midpoint quadrature."""
        edges = grid.cell_edges
        h = grid.cell_width
        offs = (np.arange(nsub) + 0.5) / nsub
        pts = edges[:-1, None] + h * offs[None, :]
        return cls(grid, tuple(atoms), np.maximum(np.asarray(f(pts), dtype=float).mean(axis=1), 0.0))

    @classmethod
    def gaussian(cls, grid, center: float, sigma: float, mass: float, atoms=()) -> "GridMeasure":
        norm = mass / (sigma * np.sqrt(2.0 * np.pi))
        return cls.from_function(grid, lambda x: norm * np.exp(-0.5 * ((x - center) / sigma) ** 2), atoms)

    # algebra

    @property
    def atom_locations(self) -> np.ndarray:
        return np.array([a[0] for a in self.atoms])

    @property
    def atom_masses(self) -> np.ndarray:
        return np.array([a[1] for a in self.atoms])

    @property
    def atom_mass(self) -> float:
        return float(sum(m for _, m in self.atoms))

    @property
    def density_mass(self) -> float:
        return float(self.density.sum() * self.grid.cell_width)

    def __add__(self, other: "GridMeasure") -> "GridMeasure":
        check_same_grid(self.grid, other.grid)
        return GridMeasure(self.grid, self.atoms + other.atoms, self.density + other.density)

    def scale(self, c: float) -> "GridMeasure":
        if c < 0:
            raise MeasureError("only nonnegative scalings stay in the positive cone")
        return GridMeasure(self.grid, tuple((x, c * m) for x, m in self.atoms), c * self.density)

    def __eq__(self, other):
        if not isinstance(other, GridMeasure):
            return NotImplemented
        return (
            self.grid == other.grid
            and self.atoms == other.atoms
            and np.array_equal(self.density, other.density)
        )

    __hash__ = None

    def __repr__(self):
        return (
            f"GridMeasure(atoms={list(self.atoms)}, density_mass={self.density_mass:.6g}, "
            f"grid={self.grid})"
        )


def total_mass(m: GridMeasure) -> float:
    return m.atom_mass + m.density_mass


def _edge_samples(m: GridMeasure, phi) -> np.ndarray:
    edges = m.grid.cell_edges
    if callable(phi):
        return np.asarray(phi(edges), dtype=float) * np.ones_like(edges)
    phi = np.asarray(phi, dtype=float)
    if phi.shape != edges.shape:
        raise GridError(
            f"test function needs {edges.size} samples at the cell edges, got shape {phi.shape}"
        )
    return phi


def pair(m: GridMeasure, phi, weight: str | None = None) -> float:
    """``int phi dmu`` or, with ``weight="rho"``, ``int phi rho dmu``.

    ``phi`` is sampled at the cell edges (``grid.cell_edges``) or given as a
    callable. Atoms see the linear interpolant of the samples; cells see the
    trapezoid average of their two edge values.
    """
    edges = m.grid.cell_edges
    vals = _edge_samples(m, phi)
    if weight == "rho":
        vals = vals * np.minimum(edges - m.grid.lo, m.grid.hi - edges)
    elif weight not in (None, "none"):
        raise MeasureError(f"unknown weight {weight!r}")
    cell_vals = 0.5 * (vals[:-1] + vals[1:])
    out = float(np.dot(m.density, cell_vals) * m.grid.cell_width)
    if m.atoms:
        out += float(np.dot(m.atom_masses, np.interp(m.atom_locations, edges, vals)))
    return out


def measure_sup(a: GridMeasure, b: GridMeasure) -> GridMeasure:
    """Least upper bound: cellwise max of densities, union of atoms with max mass."""
    check_same_grid(a.grid, b.grid)
    atoms = dict(a.atoms)
    for x, mb in b.atoms:
        atoms[x] = max(atoms.get(x, 0.0), mb)
    return GridMeasure(a.grid, tuple(atoms.items()), np.maximum(a.density, b.density))


def measure_inf(a: GridMeasure, b: GridMeasure) -> GridMeasure:
    """Greatest lower bound: cellwise min of densities, min mass on shared atoms.

    An atom charged by one side only meets an absolutely continuous part on
    the other side, which gives the point no mass.
    """
    check_same_grid(a.grid, b.grid)
    bd = dict(b.atoms)
    atoms = tuple((x, min(ma, bd[x])) for x, ma in a.atoms if x in bd)
    return GridMeasure(a.grid, atoms, np.minimum(a.density, b.density))


def _check_intervals(E: Intervals, grid) -> list[tuple[float, float]]:
    out = []
    for pair_ in E:
        lo, hi = (float(v) for v in pair_)
        if not lo <= hi:
            raise MeasureError(f"interval endpoints out of order: [{lo}, {hi}]")
        if lo < grid.lo or hi > grid.hi:
            raise MeasureError(f"interval [{lo}, {hi}] leaves [{grid.lo}, {grid.hi}]")
        out.append((lo, hi))
    return out


def merge_intervals(E: Intervals) -> list[tuple[float, float]]:
    merged: list[list[float]] = []
    for lo, hi in sorted((float(a), float(b)) for a, b in E):
        if hi < lo:
            raise MeasureError(f"interval endpoints out of order: [{lo}, {hi}]")
        if merged and lo <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])
    return [(a, b) for a, b in merged]


def complement_intervals(E: Intervals, grid) -> list[tuple[float, float]]:
    """Closure of the complement of ``E`` in the grid's interval."""
    out, cur = [], grid.lo
    for lo, hi in merge_intervals(_check_intervals(E, grid)):
        if lo > cur:
            out.append((cur, lo))
        cur = max(cur, hi)
    if cur < grid.hi:
        out.append((cur, grid.hi))
    return out


def overlap_fractions(E: Intervals, grid) -> np.ndarray:
    """Fraction of each cell covered by the union ``E``."""
    edges = grid.cell_edges
    cover = np.zeros(grid.ncells)
    for lo, hi in merge_intervals(E):
        cover += np.clip(np.minimum(edges[1:], hi) - np.maximum(edges[:-1], lo), 0.0, None)
    return np.clip(cover / grid.cell_width, 0.0, 1.0)


def measure_restrict(m: GridMeasure, E: Intervals, closed: bool = True) -> GridMeasure:
    """``chi_E mu``; straddling cells keep their overlap fraction.

    With ``closed=False`` the set is the interior of ``E``: atoms sitting on
    an endpoint are dropped. ``restrict(m, E) + restrict(m, complement, closed=False)``
    reassembles ``m``.
    """
    E = _check_intervals(E, m.grid)
    if closed:
        keep = lambda x: any(lo <= x <= hi for lo, hi in E)
    else:
        keep = lambda x: any(lo < x < hi for lo, hi in E)
    atoms = tuple((x, w) for x, w in m.atoms if keep(x))
    return GridMeasure(m.grid, atoms, m.density * overlap_fractions(E, m.grid))


def lebesgue_decompose(m: GridMeasure) -> tuple[GridMeasure, GridMeasure]:
    """``(absolutely continuous part, singular part)``."""
    return GridMeasure(m.grid, (), m.density), GridMeasure(m.grid, m.atoms)


def measure_leq(a: GridMeasure, b: GridMeasure, atol: float = 0.0) -> bool:
    check_same_grid(a.grid, b.grid)
    bd = dict(b.atoms)
    for x, ma in a.atoms:
        if ma > bd.get(x, 0.0) + atol:
            return False
    return bool(np.all(a.density <= b.density + atol / a.grid.cell_width))


def tv_distance(a: GridMeasure, b: GridMeasure) -> float:
    """Total variation ``|a - b|(Omega)`` on the atoms + density representation."""
    check_same_grid(a.grid, b.grid)
    ad, bd = dict(a.atoms), dict(b.atoms)
    atoms = sum(abs(ad.get(x, 0.0) - bd.get(x, 0.0)) for x in set(ad) | set(bd))
    return float(atoms + np.abs(a.density - b.density).sum() * a.grid.cell_width)


def positive_part_mass(a: GridMeasure, b: GridMeasure) -> float:
    """``(a - b)_+(Omega)``."""
    check_same_grid(a.grid, b.grid)
    ad, bd = dict(a.atoms), dict(b.atoms)
    atoms = sum(max(ad.get(x, 0.0) - bd.get(x, 0.0), 0.0) for x in set(ad) | set(bd))
    return float(atoms + np.clip(a.density - b.density, 0.0, None).sum() * a.grid.cell_width)


# lateral boundary data: one time-axis measure per endpoint


ENDPOINTS = ("left", "right")


@dataclass(frozen=True, eq=False)
class BoundaryMeasure:
    """Positive measure on the lateral boundary ``{x_L, x_R} x (0, T]``.

    Each endpoint carries a :class:`GridMeasure` on the time grid: time atoms
    plus a density per time cell (mass per unit time).
    """

    tgrid: TimeGrid
    parts: Mapping[str, GridMeasure] = field(default_factory=dict)

    def __post_init__(self):
        parts = {}
        for e in ENDPOINTS:
            m = self.parts.get(e) if self.parts else None
            if m is None:
                m = GridMeasure(self.tgrid)
            check_same_grid(m.grid, self.tgrid)
            parts[e] = m
        unknown = set(self.parts or {}) - set(ENDPOINTS)
        if unknown:
            raise MeasureError(f"unknown endpoint(s) {sorted(unknown)}")
        object.__setattr__(self, "parts", parts)

    @property
    def left(self) -> GridMeasure:
        return self.parts["left"]

    @property
    def right(self) -> GridMeasure:
        return self.parts["right"]

    def map(self, fn, *others: "BoundaryMeasure") -> "BoundaryMeasure":
        return BoundaryMeasure(
            self.tgrid, {e: fn(self.parts[e], *(o.parts[e] for o in others)) for e in ENDPOINTS}
        )

    def __add__(self, other):
        return self.map(lambda a, b: a + b, other)

    def scale(self, c: float):
        return self.map(lambda a: a.scale(c))

    def __eq__(self, other):
        if not isinstance(other, BoundaryMeasure):
            return NotImplemented
        return self.tgrid == other.tgrid and all(self.parts[e] == other.parts[e] for e in ENDPOINTS)

    __hash__ = None

    def dirichlet_values(self) -> np.ndarray:
        """Per-step Dirichlet values, shape ``(nt, 2)``; row n is the data on cell (t_n, t_{n+1}].

        A time atom is smeared over the single cell containing it (value
        mass / dt), so the boundary data keep their mass exactly.
        """
        tg = self.tgrid
        out = np.zeros((tg.nt, 2))
        for j, e in enumerate(ENDPOINTS):
            m = self.parts[e]
            out[:, j] = m.density
            for t, mass in m.atoms:
                n = min(int(np.ceil(t / tg.dt)) - 1, tg.nt - 1)
                out[max(n, 0), j] += mass / tg.dt
        return out


def boundary_total_mass(bm: BoundaryMeasure) -> float:
    return sum(total_mass(bm.parts[e]) for e in ENDPOINTS)


def boundary_tv_distance(a: BoundaryMeasure, b: BoundaryMeasure) -> float:
    return sum(tv_distance(a.parts[e], b.parts[e]) for e in ENDPOINTS)
