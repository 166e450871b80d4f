import numpy as np
import pytest


def random_spd(rng, dim, scale=1.0):
    a = rng.normal(size=(dim, dim))
    return scale * (a @ a.T + dim * np.eye(dim))


def random_rank1(rng, dim, scale=1.0):
    h = rng.normal(size=dim)
    return scale * np.outer(h, h), h


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
