import numpy as np
import pytest

from dpdjoint.model import Dataset, ModelParams


def random_instance(rng, n=None, p=None, sigma2=None, scale=1.0):
    """Small random (data, params) pair with moderate residuals."""
    n = int(rng.integers(2, 11)) if n is None else n
    p = int(rng.integers(1, 5)) if p is None else p
    X = rng.standard_normal((n, p))
    params = ModelParams(
        scale * rng.standard_normal(p),
        scale * rng.standard_normal(p),
        scale * rng.standard_normal(p),
        float(rng.uniform(0.5, 2.0)) if sigma2 is None else sigma2,
    )
    z = rng.integers(0, 2, n)
    mu = np.where(z == 1, X @ params.beta, X @ params.omega)
    y = mu + rng.standard_normal(n) * np.sqrt(params.sigma2)
    return Dataset(X, y, z), params


def simulate_joint(rng, n, beta, omega, eta, sigma=1.0, noise="gauss"):
    beta, omega, eta = map(np.asarray, (beta, omega, eta))
    X = rng.standard_normal((n, beta.size))
    z = (rng.random(n) < 1 / (1 + np.exp(-(X @ eta)))).astype(int)
    if noise == "gauss":
        e = rng.normal(0, sigma, n)
    else:
        e = rng.laplace(0, sigma / np.sqrt(2), n)
    y = np.where(z == 1, X @ beta, X @ omega) + e
    return Dataset(X, y, z)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)
