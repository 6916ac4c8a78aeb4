import math

import numpy as np
import pytest

from coulomb_lab.equilibrium import solve_equilibrium
from coulomb_lab.geometry import Domain, build_grid
from coulomb_lab.measures import DiscreteMeasure
from coulomb_lab.weights import WeightSpec

_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES] = []


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line per acceptance criterion; printed in the terminal summary."""
    lines = request.config.stash[_LINES]

    def record(number: int, ok: bool, detail: str):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)


# ---------------------------------------------------------------------------
# shared solves

@pytest.fixture(scope="session")
def interval_grid():
    return build_grid(Domain.interval(-1, 1), 2000)


@pytest.fixture(scope="session")
def arcsine_eq(interval_grid):
    return solve_equilibrium(interval_grid, WeightSpec.zero())


@pytest.fixture(scope="session")
def line_grid():
    return build_grid(Domain.realline(), 2000)


@pytest.fixture(scope="session")
def cauchy_eq(line_grid):
    return solve_equilibrium(line_grid, WeightSpec.cauchy_log(1.0))


@pytest.fixture(scope="session")
def semicircle_eq(line_grid):
    return solve_equilibrium(line_grid, WeightSpec.gaussian(1.0))


def arcsine_measure(grid):
    return DiscreteMeasure.from_grid(grid, np.diff(np.arcsin(grid.edges)) / math.pi)


def uniform_measure(grid):
    m = np.asarray(grid.cell_measures, dtype=float)
    return DiscreteMeasure.from_grid(grid, m / m.sum())


def semicircle_measure(grid):
    x = np.clip(grid.edges, -1, 1)
    cdf = (x * np.sqrt(1 - x**2) + np.arcsin(x)) / math.pi
    return DiscreteMeasure.from_grid(grid, np.diff(cdf))
