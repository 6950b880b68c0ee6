import numpy as np
import pytest


def central_difference(loss_fn, array, indices, h=1e-4):
    """Central finite differences of a scalar loss w.r.t. selected flat
    indices of one parameter array (mutated in place and restored)."""
    flat = array.ravel()
    out = {}
    for i in indices:
        orig = flat[i]
        flat[i] = orig + h
        lp = loss_fn()
        flat[i] = orig - h
        lm = loss_fn()
        flat[i] = orig
        out[i] = (lp - lm) / (2.0 * h)
    return out


def relative_error(a, b, floor=1e-6):
    return abs(a - b) / max(abs(a), abs(b), floor)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
