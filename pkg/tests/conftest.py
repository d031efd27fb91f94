import numpy as np
import pytest

from slowdrift.model import Box, builtin_oscillator, builtin_saddle_oscillator
from slowdrift.scenarios import synthetic_scenario


@pytest.fixture(scope="session")
def oscillator():
    return builtin_oscillator()


@pytest.fixture(scope="session")
def saddle():
    return builtin_saddle_oscillator(lam=0.5)


@pytest.fixture(scope="session")
def unit_box():
    return Box([-1.0, -1.0], [1.0, 1.0])


@pytest.fixture(scope="session")
def scenario():
    return synthetic_scenario()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
