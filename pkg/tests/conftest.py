import pytest

from helios.pvsim import calibrate_module


@pytest.fixture(scope="session")
def module_params():
    """Calibrated single-diode parameters, shared across the suite."""
    return calibrate_module()
