import pytest

from hidden_csma import ModelParams, solve_model

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def solved():
    """Solved models keyed by (p_tx, L, R), built on first use."""
    cache = {}

    def get(p_tx, L=32, R=16):
        key = (p_tx, L, R)
        if key not in cache:
            cache[key] = solve_model(ModelParams(p_tx, L, R))
        return cache[key]

    return get


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
