import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20260808)


def random_latent(rng, shape, scale=1.0):
    return (scale * rng.standard_normal(shape)).astype(np.float32)
