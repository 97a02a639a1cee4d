import numpy as np
import pytest

from fbdomain.jets import JetMap


@pytest.fixture
def shear():
    """F(x, y) = (x/2, y/5 + x^2)."""
    return JetMap.from_terms(2, 2, {(1, (1, 0)): 0.5, (2, (0, 1)): 0.2, (2, (2, 0)): 1.0})


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
