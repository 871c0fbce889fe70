import sys
from pathlib import Path

import numpy as np
import pytest

from scgi_reid.nn import set_default_dtype

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(autouse=True)
def float64_default():
    """Oracle comparisons need 64-bit; training paths pick their own dtype."""
    set_default_dtype(np.float64)
    yield
    set_default_dtype(np.float32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
