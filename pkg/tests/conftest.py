import pytest

from sqpinvit import modelgen as mg
from _helpers import ACCEPTANCE_LINES


@pytest.fixture(scope="session")
def model14():
    """Default model coefficients on 14 orbitals."""
    return mg.generate_coefficients(mg.ModelSpec(K=14))


@pytest.fixture(scope="session")
def model6():
    return mg.generate_coefficients(mg.ModelSpec(K=6))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
