# File for internal use (unit tests)

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(123)


@pytest.fixture
def unit_triangle():
    return [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]


@pytest.fixture
def unit_tetrahedron():
    return [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
