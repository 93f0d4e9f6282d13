"""Shared solves, session-scoped: the expensive grids are built once."""

import pytest

from survalloc import DriftBudget, solve_recursive

PARAMS0 = DriftBudget(0.0)


def pytest_configure(config):
    config._acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture
def criterion(request):
    """Records one pass/fail line per acceptance criterion, then asserts it."""
    def record(num, ok, label, detail):
        line = f"criterion {num:02d} [{'PASS' if ok else 'FAIL'}] {label}: {detail}"
        request.config._acceptance_lines.append(line)
        print(line)
        assert ok, line
    return record


@pytest.fixture(scope="session")
def v_chain_257():
    """V grids for dimensions 1..2 at b=0, m=257, plus policy fields."""
    return solve_recursive(2, "V", PARAMS0, 257)


@pytest.fixture(scope="session")
def v_chain_513():
    return solve_recursive(2, "V", PARAMS0, 513)


@pytest.fixture(scope="session")
def v1_513(v_chain_513):
    return v_chain_513[0][1]


@pytest.fixture(scope="session")
def v2_257(v_chain_257):
    return v_chain_257[0][2]


@pytest.fixture(scope="session")
def v2_513(v_chain_513):
    return v_chain_513[0][2]


@pytest.fixture(scope="session")
def v2_b05_257():
    return solve_recursive(2, "V", DriftBudget(0.5), 257)[0][2]


@pytest.fixture(scope="session")
def v2_b1_257():
    return solve_recursive(2, "V", DriftBudget(1.0), 257)[0][2]


@pytest.fixture(scope="session")
def v3_chain_129():
    return solve_recursive(3, "V", PARAMS0, 129)


@pytest.fixture(scope="session")
def u_chain_257():
    return solve_recursive(2, "U", PARAMS0, 257)


@pytest.fixture(scope="session")
def u2_257(u_chain_257):
    return u_chain_257[0][2]


@pytest.fixture(scope="session")
def u2_b1_257():
    return solve_recursive(2, "U", DriftBudget(1.0), 257)[0][2]


@pytest.fixture(scope="session")
def u3_chain_129():
    return solve_recursive(3, "U", PARAMS0, 129)
