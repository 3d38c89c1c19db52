import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def finite_difference(f, x: np.ndarray, idx, h: float = 1e-3) -> float:
    """Central finite difference of a scalar function at one coordinate."""
    xp = x.copy()
    xp[idx] += h
    fp = f(xp)
    xp[idx] -= 2 * h
    fm = f(xp)
    return (fp - fm) / (2 * h)
