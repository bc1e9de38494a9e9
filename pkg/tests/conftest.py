import numpy as np
import pytest
from hypothesis import settings

from fbdsde_games.instances import spec_a, spec_z
from fbdsde_games.model import CoefficientFn, LqGameSpec

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def specA():
    return spec_a()


@pytest.fixture(scope="session")
def specZ():
    return spec_z()


@pytest.fixture
def exp_spec():
    """a1 = 1, xi = 1 on [0, 1]; Y(0) = e."""
    return LqGameSpec(a1=1.0, terminal=(1.0, 0.0))


@pytest.fixture
def constant_spec():
    """Zero dynamics, xi = 1, M = 1 and every weight equal to one."""
    one = CoefficientFn.constant(1.0)
    return LqGameSpec(e=((one,) * 7, (one,) * 7), M=1.0, terminal=(1.0, 0.0))


@pytest.fixture
def acceptance_log():
    def log(line):
        ACCEPTANCE_LINES.append(line)
        print(line)
    return log


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
