import pytest

from tlesim.config import ta_reference_case
from tlesim.materials import default_registry
from tlesim.mesh import generate_cylinder_mesh


@pytest.fixture(scope="session")
def registry():
    return default_registry()


@pytest.fixture(scope="session")
def ta(registry):
    return registry["Ta"]


@pytest.fixture(scope="session")
def coarse_mesh():
    return generate_cylinder_mesh(3e-3, 8e-3, 1)


@pytest.fixture(scope="session")
def small_mesh():
    return generate_cylinder_mesh(3e-3, 8e-3, 3)


@pytest.fixture(scope="session")
def coarse_case():
    return ta_reference_case(refinement=4)


@pytest.fixture(scope="session")
def coarse_steady(coarse_case):
    from tlesim.fem import run_to_steady

    return run_to_steady(coarse_case)


# Acceptance criteria append "(number, PASS/FAIL, text)" here; the lines are
# echoed at the end of the run so they show up without -s.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, verdict, text in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(f"criterion {number}: {verdict}  {text}")
