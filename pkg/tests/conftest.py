"""Shared numerical helpers for the test suite."""

import numpy as np
import pytest

FD_STEP = 1e-5


def fd_gradient(f, x, step=FD_STEP):
    """Central-difference gradient of the scalar function f at x.

    f takes no arguments and reads x by reference; x is perturbed in
    place one element at a time and restored afterwards.
    """
    grad = np.zeros(x.shape, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        plus = f()
        flat[i] = orig - step
        minus = f()
        flat[i] = orig
        gflat[i] = (plus - minus) / (2.0 * step)
    return grad


def max_rel_err(analytic, numeric, floor=1e-4):
    """Largest elementwise relative error, floored to avoid 0/0."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


@pytest.fixture
def fd():
    return fd_gradient


@pytest.fixture
def rel_err():
    return max_rel_err
