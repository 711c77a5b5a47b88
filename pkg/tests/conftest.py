import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from setflow.grid import Grid, ScalarField

settings.register_profile("setflow", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("setflow")


def disk_field(grid, center=(0.0, 0.0), radius=1.0):
    return ScalarField(grid, np.linalg.norm(grid.coords() - np.asarray(center), axis=-1) - radius)


@pytest.fixture
def grid64():
    return Grid.box((-1.5, -1.5), (1.5, 1.5), 1 / 64)


@pytest.fixture
def grid32():
    return Grid.box((-1.5, -1.5), (1.5, 1.5), 1 / 32)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
