import numpy as np
import pytest

from potlab.space import model_space


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture(scope="session")
def tree6():
    return model_space("tree-boundary", 2, 6, 0.5)


@pytest.fixture(scope="session")
def tree8():
    return model_space("tree-boundary", 2, 8, 0.5)


@pytest.fixture(scope="session")
def cantor6():
    return model_space("cantor-set", 2, 6)


@pytest.fixture(scope="session")
def interval6():
    return model_space("unit-interval", 2, 6)
