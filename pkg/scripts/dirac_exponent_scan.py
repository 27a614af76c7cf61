"""Reduced mass of a unit Dirac across power exponents around the critical value 3.

    python scripts/dirac_exponent_scan.py [nx] [nt]
"""

import sys

from rml.grids import SpaceGrid, TimeGrid
from rml.measures import GridMeasure, total_mass
from rml.nonlinearity import NonlinearitySpec
from rml.relaxation import goodness_from, reduced_measure


def main(nx=399, nt=800):
    sg, tg = SpaceGrid(-1.0, 1.0, nx), TimeGrid(0.25, nt)
    m = GridMeasure.dirac(sg, 0.0)
    print(f"{'p':>5} {'mass*':>8} {'defect':>8}  verdict")
    for p in (1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 6.0):
        r = reduced_measure(m, NonlinearitySpec("power", p=p), sg=sg, tg=tg, keep_field=False)
        v = goodness_from(r)
        print(f"{p:5.1f} {total_mass(r.limit_trace):8.4f} {r.defect_mass:8.4f}  {v.verdict}")


if __name__ == "__main__":
    main(*(int(a) for a in sys.argv[1:3]))
