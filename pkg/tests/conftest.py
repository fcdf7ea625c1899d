import pytest

from holocrit import _accel


@pytest.fixture(params=["numba", "numpy"])
def backend(request):
    if request.param == "numba" and not _accel.HAVE_NUMBA:
        pytest.skip("numba not installed")
    before = _accel.backend_name()
    _accel.set_backend(request.param)
    yield request.param
    _accel.set_backend(before)
