import pytest

from capgap.payoff import default_model
from capgap.zdengine import PayoffTables, StrategyGrid

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def model():
    return default_model()


@pytest.fixture
def grid():
    return StrategyGrid()


@pytest.fixture
def tables(model, grid):
    return PayoffTables.from_model(model, grid)


@pytest.fixture
def small_grid():
    return StrategyGrid(1, 1, 10.0)


@pytest.fixture
def small_tables(model, small_grid):
    return PayoffTables.from_model(model, small_grid)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
