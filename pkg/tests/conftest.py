import numpy as np
import pytest

from evsched.road_network import build_grid


@pytest.fixture
def grid2x2():
    return build_grid(2, 2, 100.0, 10.0)


@pytest.fixture
def grid3x3():
    return build_grid(3, 3, 300.0, 10.0)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(12345))
