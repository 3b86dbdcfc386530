import numpy as np
import pytest

from pgmatch.data import generate_synthetic


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance checks")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_splits():
    """Tiny train/val/test triple sharing class centers."""
    mk = lambda n, s: generate_synthetic(n, 4, 3, 3.0, seed=s, centers_seed=11)
    return mk(240, 1), mk(60, 2), mk(120, 3)
