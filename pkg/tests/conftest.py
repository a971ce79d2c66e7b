import numpy as np
import pytest

from lvdsk import _kernels
from lvdsk.lvem import LVState

BACKENDS = _kernels.available_backends()


@pytest.fixture(params=sorted(BACKENDS))
def backend(request):
    return BACKENDS[request.param]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_state(rng, M, N, zero_frac=0.0):
    beta = rng.dirichlet(np.ones(M))
    delta = rng.dirichlet(np.ones(N), size=M)
    return LVState(beta, delta)


def random_table(rng, T, M, N, lo=-5.0, hi=0.0):
    return rng.uniform(lo, hi, (T, M, N))
