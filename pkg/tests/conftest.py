import numpy as np
import pytest

from formbound_lab import kernels


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    # compile the jitted kernels once so individual test timings are honest
    kernels.warmup()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
