import pytest

from ctfsim.calibration import default_params, default_ode_params


@pytest.fixture(scope="session")
def params():
    """Shipped calibrated parameter set."""
    return default_params()


@pytest.fixture(scope="session")
def ode_params():
    return default_ode_params()
