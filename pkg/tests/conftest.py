import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "nabc", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("nabc")


def lower(values, p):
    """Symmetric unit-diagonal matrix from a row-major lower triangle."""
    M = np.eye(p)
    M[np.tril_indices(p, -1)] = values
    return M + np.tril(M, -1).T


def random_corr(rng, p, df=None):
    A = rng.standard_normal((p, df or 2 * p))
    S = A @ A.T
    d = np.sqrt(np.diag(S))
    return S / np.outer(d, d)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
