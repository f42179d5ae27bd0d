import time

import pytest

from selfgrid import fixtures
from selfgrid.power_flow import compute_sensitivity, solve_power_flow

SESSION_START = time.perf_counter()
# acceptance lines, filled by tests/test_acceptance.py
ACCEPTANCE: dict[int, str] = {}
RUNTIME_TEST = "test_c10_end_to_end_runtime"


@pytest.fixture(scope="session")
def meshed():
    grid = fixtures.meshed_30bus()
    sol = solve_power_flow(grid)
    return grid, sol, compute_sensitivity(grid, sol)


@pytest.fixture(scope="session")
def cs1():
    grid = fixtures.case_study_1()
    sol = solve_power_flow(grid)
    return grid, sol, compute_sensitivity(grid, sol)


def pytest_collection_modifyitems(items):
    # the runtime criterion measures the whole session, so it runs last
    last = [it for it in items if it.name == RUNTIME_TEST]
    items[:] = [it for it in items if it.name != RUNTIME_TEST] + last


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
