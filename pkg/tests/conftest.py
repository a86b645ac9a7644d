import numpy as np
import pytest

FD_STEP = 1e-6


def central_diff(f, x, h=FD_STEP):
    return (f(x + h) - f(x - h)) / (2 * h)


def assert_grad_close(analytic, numeric, rel=1e-5, abs_=1e-7):
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    tol = np.maximum(rel * np.abs(numeric), abs_)
    bad = np.abs(analytic - numeric) > tol
    assert not bad.any(), (
        f"{bad.sum()} entries differ; worst |a-n|={np.abs(analytic - numeric).max():.3g}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
