import numpy as np
import pytest

from wstokes.cases import builtin_case
from wstokes.mesh import build_cube_mesh
from wstokes.spaces import TaylorHoodSpace

# one pass/fail line per acceptance criterion, emitted after the run so
# they survive pytest's output capture
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def mesh2():
    return build_cube_mesh(2)


@pytest.fixture(scope="session")
def mesh3():
    return build_cube_mesh(3)


@pytest.fixture(scope="session")
def mesh4():
    return build_cube_mesh(4)


@pytest.fixture(scope="session")
def space2(mesh2):
    return TaylorHoodSpace(mesh2)


@pytest.fixture(scope="session")
def space3(mesh3):
    return TaylorHoodSpace(mesh3)


@pytest.fixture(scope="session")
def space4(mesh4):
    return TaylorHoodSpace(mesh4)


@pytest.fixture(scope="session")
def curl_case():
    return builtin_case("smooth_curl")


@pytest.fixture
def rng():
    # fresh stream per test so collection order cannot shift draws
    return np.random.default_rng(20240817)
