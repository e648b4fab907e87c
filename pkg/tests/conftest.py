import numpy as np
import pytest

from camvr import _kernels


@pytest.fixture(params=_kernels.available_backends())
def backend(request):
    """Run the test once per available matmul backend."""
    prev = _kernels.backend_name()
    _kernels.set_backend(request.param)
    yield request.param
    _kernels.set_backend(prev)


@pytest.fixture
def rng():
    return np.random.default_rng(20260826)
