import numpy as np
import pytest

from rsm.tasks import language_spec


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def anbn():
    return language_spec("anbn")
