import numpy as np
import pytest

from cpsvd.whiten import GramMatrix


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_instance(rng, m, n, d=None):
    """Gaussian weight plus explicit activations and their Gram matrix."""
    d = 2 * n if d is None else d
    w = rng.standard_normal((m, n))
    x = rng.standard_normal((n, d))
    return w, x, GramMatrix(x @ x.T, d)


def rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)
