import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from tvarnet.model import MultivariateSeries, TvarCoefficients  # noqa: E402


def random_series(rng, P, T, scale=1.0):
    return MultivariateSeries(scale * rng.standard_normal((P, T)))


def random_coeffs(rng, P, L, T, starts=None, density=1.0):
    if starts is None:
        starts = (L + 1,)
    c = rng.standard_normal((len(starts), L, P, P))
    if density < 1.0:
        keep = rng.random((len(starts), 1, P, P)) < density
        c = c * keep
    return TvarCoefficients(c, starts, T)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
