import numpy as np
import pytest

from scn import tensor as T


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def rand(rng, *shape, lo=-1.0, hi=1.0, dtype=np.float64, requires_grad=False):
    return T.Tensor(rng.uniform(lo, hi, size=shape).astype(dtype), requires_grad=requires_grad)


def weighted_sum(y, m):
    """Scalar probe with a fixed random weighting so gradients are not all ones."""
    return T.sum_all(T.mul(y, m))
