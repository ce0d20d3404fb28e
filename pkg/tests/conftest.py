import numpy as np
import pytest
from hypothesis import settings

from hjmmlab.curves import CurveGrid, ForwardCurve

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture
def grid():
    return CurveGrid.uniform(5.0, 0.01)


@pytest.fixture
def exp_curve(grid):
    return ForwardCurve(grid, np.exp(-grid.points), 0.1)


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_log():
    def log(label, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] {label}: {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)

    return log


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
