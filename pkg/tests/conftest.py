import pytest

from cauchy_stokes.mesh import DomainKind, build_grid


@pytest.fixture(scope="session")
def square8():
    return build_grid(DomainKind.UNIT_SQUARE, 8)


@pytest.fixture(scope="session")
def square16():
    return build_grid(DomainKind.UNIT_SQUARE, 16)


@pytest.fixture(scope="session")
def annulus16():
    return build_grid(DomainKind.SQUARE_ANNULUS, 16)


@pytest.fixture(scope="session")
def annulus32():
    return build_grid(DomainKind.SQUARE_ANNULUS, 32)


# one summary line per acceptance criterion, filled in by tests/test_acceptance.py
CRITERIA: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[k])
