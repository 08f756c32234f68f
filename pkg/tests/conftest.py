import numpy as np
import pytest


def pytest_report_header(config):
    from clqlab import kernels

    return f"clqlab kernel backend: {kernels.BACKEND}"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=["python", "compiled"])
def backend(request, monkeypatch):
    """Run a test against each available kernel implementation."""
    from clqlab import kernels

    if request.param == "compiled":
        if kernels.compiled_backend is None:
            pytest.skip("compiled extension not built")
        impl = kernels.compiled_backend
    else:
        impl = kernels.python_backend
    monkeypatch.setattr(kernels, "_impl", impl)
    return request.param
