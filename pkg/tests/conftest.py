import numpy as np
import pytest

from worstrisk.simulation import reference_config


@pytest.fixture(scope="session")
def ref():
    return reference_config()


@pytest.fixture(scope="session")
def moments(ref):
    return ref.moments()


@pytest.fixture
def rng():
    return np.random.default_rng(42)
