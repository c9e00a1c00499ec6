import pytest

from hgnl import backend


@pytest.fixture(params=backend.available_backends())
def kernel_backend(request):
    """Run the test once per installed kernel backend."""
    previous = backend.select(request.param)
    yield request.param
    backend.select(previous)
