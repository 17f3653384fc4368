from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rho_paths.environment import EnvParams, generate

# numba compiles on first use, so wall-clock deadlines are meaningless here
settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_env(rng, dims=(1, 2, 3), max_n=8, materialize=True):
    d = int(rng.choice(dims))
    n = int(rng.integers(1, max_n + 1))
    p = float(rng.uniform(0.1, 0.9))
    return generate(EnvParams(d, n, p, int(rng.integers(0, 2**63))), materialize=materialize)
