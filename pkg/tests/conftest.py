import numpy as np
import pytest

from wavegauge import scenarios as sc


@pytest.fixture(scope="session")
def window():
    return sc.DEFAULT_WINDOW


@pytest.fixture(scope="session")
def grid():
    return sc.default_grid(101)


@pytest.fixture(scope="session")
def coarse():
    return sc.default_grid(51)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
