from datetime import timedelta

import numpy as np
import pytest
from hypothesis import settings

from visiongru import tensor as T

settings.register_profile("default", deadline=timedelta(seconds=20), max_examples=50)
settings.load_profile("default")


@pytest.fixture
def f64():
    with T.precision("float64"):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
