import numpy as np
import pytest

from kdvlab.grid import FourierField


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def two_mode():
    """Reference two-open-gap potential 0.2 e_1 + 0.1 e_{-2}."""
    return FourierField.from_modes({1: (0.2, 0.0), 2: (0.0, 0.1)}, 32, 128)


@pytest.fixture
def small_cos():
    return FourierField.from_modes({1: (0.1, 0.0)}, 16, 64)
