import numpy as np
import pytest

from fmblab import Population


def random_population(rng, m=None, n=None, with_dtheta=True, allow_zero_weight=False):
    """Seeded random population for property tests."""
    m = m if m is not None else int(rng.integers(2, 51))
    n = n if n is not None else int(rng.integers(1, 6))
    q = rng.random(m) + 0.05
    if allow_zero_weight and m > 2:
        q[int(rng.integers(0, m))] = 0.0
    q /= q.sum()
    return Population(
        q=q,
        theta=rng.standard_normal((m, n)),
        w=rng.random(m) + 0.1,
        dtheta=0.3 * rng.standard_normal((m, n)) if with_dtheta else None,
    )


def random_simplex(rng, m, floor=0.02):
    q = rng.random(m) + floor
    return q / q.sum()


@pytest.fixture
def rng():
    return np.random.default_rng(20240801)
