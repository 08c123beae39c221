import numpy as np
import pytest

from colddiff.core import RngStream


@pytest.fixture
def rng() -> RngStream:
    return RngStream(1234)


@pytest.fixture
def random_image(rng):
    def make(h=16, w=16, c=1, seed_index=0):
        return rng.child(seed_index).generator().random((h, w, c))
    return make


def assert_images_equal(a: np.ndarray, b: np.ndarray):
    assert a.shape == b.shape
    assert np.array_equal(a, b)
