import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def shifted_series(rng):
    """n=80, d=30, mean shift of 1.5 on the first 6 components after t=40."""
    from abcdcp.core import SeriesTensor

    x = rng.standard_normal((80, 30))
    x[40:, :6] += 1.5
    return SeriesTensor(x)
