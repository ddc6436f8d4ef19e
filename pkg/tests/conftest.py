import pytest

from src.model import ModelParams


@pytest.fixture
def one_param():
    """u = p = 0.6, tau = 2/3."""
    return ModelParams.one_parameter(0.6)


@pytest.fixture
def tau_half():
    """u = p = 2/3, tau = 1/2."""
    return ModelParams.one_parameter(2.0 / 3.0)


@pytest.fixture
def two_param():
    return ModelParams.from_up(0.6, 0.75)


@pytest.fixture
def seed():
    return 12345
