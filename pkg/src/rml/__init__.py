"""Reduced measures for the semilinear heat equation with measure data.

A desk-scale laboratory: monotone finite differences for
``u_t - u_xx + g(u) = 0`` on an interval, the truncation ladder
``g_k = min(g, k)``, trace extraction, and the L1 capacity problems.
"""

from rml.grids import SpaceGrid, TimeGrid
from rml.measures import GridMeasure, BoundaryMeasure
from rml.nonlinearity import NonlinearitySpec

__version__ = "0.1.0"

__all__ = [
    "SpaceGrid",
    "TimeGrid",
    "GridMeasure",
    "BoundaryMeasure",
    "NonlinearitySpec",
    "__version__",
]
