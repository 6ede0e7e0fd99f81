import numpy as np
import pytest
from hypothesis import settings

from sword.phantom import make_grid
from sword.projector import FanBeamGeometry

settings.register_profile("sword", deadline=None, max_examples=40)
settings.load_profile("sword")

# filled by tests/test_acceptance.py, printed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_grid():
    return make_grid(32, 20.0)


@pytest.fixture
def small_geo():
    return FanBeamGeometry(40.0, 40.0, 41.3, 64, 60)
