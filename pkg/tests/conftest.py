import os

import numpy as np
import pytest

MNIST_DIR = os.environ.get("SCURNN_MNIST_DIR", "/root/data/mnist")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def random_complex(rng, *shape):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


def random_skew_hermitian(rng, n, scale=1.0):
    from scurnn.cayley import SkewHermitianParam

    return SkewHermitianParam(
        n,
        rng.normal(scale=scale, size=n * (n - 1) // 2),
        rng.normal(scale=scale, size=n * (n + 1) // 2),
    )
