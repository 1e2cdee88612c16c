import numpy as np
import pytest

from pllac.data import make_blobs


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def blobs():
    """3 known classes plus a far augmented cluster (label 3), 200 rows each."""
    return make_blobs(200, 3, np.random.default_rng(7), separation=6.0, spread=0.8)
