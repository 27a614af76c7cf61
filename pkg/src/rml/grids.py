"""Uniform space and time grids on Q_T = (x_L, x_R) x (0, T)."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


class GridError(ValueError):
    """Raised for malformed grids or objects living on different grids."""


@dataclass(frozen=True)
class SpaceGrid:
    """``nx`` interior nodes; the two boundary nodes carry Dirichlet data.

    Density cells are the ``nx + 1`` intervals ``[x_i, x_{i+1}]``, i = 0..nx.
    """

    x_left: float
    x_right: float
    nx: int

    def __post_init__(self):
        if not self.x_left < self.x_right:
            raise GridError(f"need x_left < x_right, got {self.x_left}, {self.x_right}")
        if self.nx < 3:
            raise GridError(f"need at least 3 interior nodes, got {self.nx}")

    @property
    def dx(self) -> float:
        return (self.x_right - self.x_left) / (self.nx + 1)

    @property
    def length(self) -> float:
        return self.x_right - self.x_left

    @property
    def ncells(self) -> int:
        return self.nx + 1

    @cached_property
    def nodes(self) -> np.ndarray:
        """Interior node coordinates x_1..x_nx."""
        return self.x_left + self.dx * np.arange(1, self.nx + 1)

    @cached_property
    def all_nodes(self) -> np.ndarray:
        """Node coordinates including both boundary nodes."""
        return self.x_left + self.dx * np.arange(self.nx + 2)

    @cached_property
    def cell_edges(self) -> np.ndarray:
        return self.all_nodes

    @cached_property
    def cell_centers(self) -> np.ndarray:
        return self.x_left + self.dx * (np.arange(self.ncells) + 0.5)

    @cached_property
    def rho(self) -> np.ndarray:
        """Distance to the boundary at interior nodes."""
        x = self.nodes
        return np.minimum(x - self.x_left, self.x_right - x)

    @cached_property
    def rho_cells(self) -> np.ndarray:
        x = self.cell_centers
        return np.minimum(x - self.x_left, self.x_right - x)

    # cell-axis interface shared with TimeGrid (measures live on either)
    @property
    def lo(self) -> float:
        return self.x_left

    @property
    def hi(self) -> float:
        return self.x_right

    @property
    def cell_width(self) -> float:
        return self.dx

    def contains_open(self, x: float) -> bool:
        return self.x_left < x < self.x_right

    def refined(self) -> "SpaceGrid":
        """Halve the spacing (nx -> 2 nx + 1) so old nodes stay nodes."""
        return SpaceGrid(self.x_left, self.x_right, 2 * self.nx + 1)


@dataclass(frozen=True)
class TimeGrid:
    T: float
    nt: int

    def __post_init__(self):
        if not self.T > 0:
            raise GridError(f"need T > 0, got {self.T}")
        if self.nt < 2:
            raise GridError(f"need at least 2 time steps, got {self.nt}")

    @property
    def dt(self) -> float:
        return self.T / self.nt

    @cached_property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.nt + 1)

    @property
    def lo(self) -> float:
        return 0.0

    @property
    def hi(self) -> float:
        return self.T

    @property
    def ncells(self) -> int:
        return self.nt

    @property
    def cell_width(self) -> float:
        return self.dt

    @property
    def cell_edges(self) -> np.ndarray:
        return self.times

    @cached_property
    def cell_centers(self) -> np.ndarray:
        return self.dt * (np.arange(self.nt) + 0.5)

    def contains_open(self, t: float) -> bool:
        return 0.0 < t < self.T

    def refined(self) -> "TimeGrid":
        return TimeGrid(self.T, 2 * self.nt)


def check_same_grid(a, b) -> None:
    if a != b:
        raise GridError(f"grid mismatch: {a} vs {b}")
