import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from stseg.tensor import set_default_dtype


@pytest.fixture
def f64():
    """64-bit verification mode for oracle and finite-difference tests."""
    set_default_dtype("f64")
    yield np.float64
    set_default_dtype("f32")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
