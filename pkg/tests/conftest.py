import numpy as np
import pytest

from hybridfl.topology import SimConfig


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_config():
    return SimConfig(n=9, m=3, dataset_size=180, data_mean=20.0, data_std=5.0,
                     hidden=(4,), t_max=5, eta=0.05)
