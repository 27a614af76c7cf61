import numpy as np
import pytest
from hypothesis import HealthCheck, settings, strategies as st

from rml.grids import SpaceGrid, TimeGrid
from rml.measures import GridMeasure

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

SMALL = SpaceGrid(-1.0, 1.0, 39)


@pytest.fixture
def default_grids():
    return SpaceGrid(-1.0, 1.0, 399), TimeGrid(0.25, 400)


@st.composite
def measures(draw, grid=SMALL, pool=(-0.5, -0.1, 0.3, 0.7)):
    """Random GridMeasure; atoms come from a small location pool so sup/inf meet."""
    locs = draw(st.lists(st.sampled_from(pool), unique=True, max_size=len(pool)))
    masses = draw(st.lists(st.floats(0.0, 3.0), min_size=len(locs), max_size=len(locs)))
    dens = draw(st.lists(st.floats(0.0, 5.0), min_size=grid.ncells, max_size=grid.ncells))
    return GridMeasure(grid, tuple(zip(locs, masses)), np.array(dens))


@st.composite
def intervals(draw, grid=SMALL):
    a, b = sorted(draw(st.lists(st.floats(grid.lo, grid.hi), min_size=2, max_size=2)))
    return [(a, b)]


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance(request):
    """Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""
    return request.config.stash.setdefault(ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
