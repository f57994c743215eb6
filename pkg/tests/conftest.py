import numpy as np
import pytest

from carnotflow import kernels
from carnotflow.groups import make_euclidean, make_heisenberg, make_htype, quaternionic_J

BACKENDS = ["python"] + (["cython"] if kernels.BACKEND == "cython" else [])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


@pytest.fixture(params=["euclidean:3", "heisenberg:1", "heisenberg:2", "quaternionic"])
def any_group(request):
    return GROUPS[request.param]()


@pytest.fixture(params=["heisenberg:1", "heisenberg:2", "quaternionic"])
def htype_group(request):
    return GROUPS[request.param]()


GROUPS = {
    "euclidean:3": lambda: make_euclidean(3),
    "heisenberg:1": lambda: make_heisenberg(1),
    "heisenberg:2": lambda: make_heisenberg(2),
    "quaternionic": lambda: make_htype(quaternionic_J()),
}
