import numpy as np
import pytest

from mixedlod import fields, lod
from mixedlod.mesh import build_hierarchy

# (criterion, status, detail) lines collected by the acceptance suite
ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def hier_2_4():
    return build_hierarchy("unit_square", 2, 4)


@pytest.fixture(scope="session")
def disc_noise_2_4(hier_2_4):
    return lod.Discretization(hier_2_4, fields.make_noise(16, 10.0, seed=3))


@pytest.fixture(scope="session")
def disc_const_2_4(hier_2_4):
    return lod.Discretization(hier_2_4, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for crit, status, detail in sorted(ACCEPTANCE_LINES, key=lambda x: x[0]):
        terminalreporter.write_line(f"criterion {crit:>2}: {status:<7} {detail}")
