import numpy as np
import pytest

from declora import rng as rngmod


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_classification():
    from declora.data import generate_classification, make_base_weights
    from declora.model import ModelSpec

    ds = generate_classification(120, 5, 3, 0.3, rngmod.stream(0, "data"))
    w0 = make_base_weights(ds.w_star, 1, 1.0, rngmod.stream(0, "base"))
    return ModelSpec("multinomial_logistic", 3, 5), ds, w0
