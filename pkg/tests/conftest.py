import numpy as np
import pytest

from spinodoid import equivariant as eq
from spinodoid import surrogate as su


def make_random_model(seed, scale_out=2.0):
    """Arbitrary-parameter surrogate with a plausible normalizer."""
    spec = su.default_network_spec()
    params = eq.init_params(spec, np.random.default_rng(seed))
    normalizer = su.Normalizer(theta_min=0.0, theta_max=89.9,
                               rho_min=0.301, rho_max=0.999,
                               scale_out=scale_out)
    return su.SurrogateModel(spec=spec, params=params, normalizer=normalizer)


def random_admissible_s(rng, n=1):
    """Uniform draws over the closed admissible parameter domain, mixed types."""
    rows = np.empty((n, 4))
    for k in range(n):
        n_nonzero = rng.integers(1, 4)
        theta = np.zeros(3)
        axes = rng.permutation(3)[:n_nonzero]
        theta[axes] = rng.uniform(15.0, 90.0, size=n_nonzero)
        rows[k, :3] = theta
        rows[k, 3] = rng.uniform(0.3, 1.0)
    return rows if n > 1 else rows[0]


@pytest.fixture
def random_model():
    return make_random_model(1234)


def random_sym6(rng, scale=1.0):
    m = rng.standard_normal((6, 6)) * scale
    return 0.5 * (m + m.T)
