import sys

import numpy as np
import pytest

from cutwave.experiments import discretize
from cutwave.forms import BoundaryConditions
from cutwave.levelset import Circle


@pytest.fixture(scope="session")
def disk_p2():
    """Small disk discretisation with Dirichlet data on the circle."""
    return discretize(Circle((0.0, 0.0), 1.0), 2, 0.3, geometry="analytic",
                      boundary=BoundaryConditions("dirichlet"))


@pytest.fixture(scope="session")
def disk_reduced_p3():
    return discretize(Circle((0.03, 0.01), 1.0), 3, 0.3, variant="reduced",
                      geometry="analytic", boundary=BoundaryConditions("dirichlet"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "LINES", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
