"""Compiled kernels against the numpy reference paths."""

import numpy as np
import pytest

from conftest import spd
from crossloc import se3

pytestmark = pytest.mark.skipif(se3._fast is None or not se3.USE_JIT, reason="compiled kernels disabled")


@pytest.fixture
def stacks(rng):
    xi = rng.normal(size=(40, 6))
    xi[:5, 3:] *= 1e-9  # series branch
    xi[5:10, 3:] *= 4e-3
    Ra, ta = se3.exp_batch(xi)
    Rb, tb = se3.exp_batch(rng.normal(size=(40, 6)))
    return Ra, ta, Rb, tb


def with_numpy(monkeypatch, fn, *args, **kw):
    monkeypatch.setattr(se3, "USE_JIT", False)
    try:
        return fn(*args, **kw)
    finally:
        monkeypatch.setattr(se3, "USE_JIT", True)


def test_rel_log(monkeypatch, stacks):
    Ra, ta, Rb, tb = stacks
    a = se3.rel_log(Ra, ta, Rb, tb, strict=False)
    b = with_numpy(monkeypatch, se3.rel_log, Ra, ta, Rb, tb, strict=False)
    assert np.allclose(a, b, atol=1e-12, equal_nan=True)


def test_rel_log_cutoff(monkeypatch):
    R, t = se3.exp_batch(np.array([[0, 0, 0, 0, 0, np.pi - 1e-8]]))
    I, z = np.eye(3)[None], np.zeros((1, 3))
    assert np.isnan(se3.rel_log(I, z, R, t, strict=False)).all()
    with pytest.raises(se3.AngleNearPi):
        se3.rel_log(I, z, R, t)


def test_right_exp(monkeypatch, stacks, rng):
    Ra, ta, _, _ = stacks
    xi = rng.normal(size=(40, 6))
    xi[:4, 3:] = 0
    a = se3.right_exp(Ra, ta, xi)
    b = with_numpy(monkeypatch, se3.right_exp, Ra, ta, xi)
    assert np.allclose(a[0], b[0], atol=1e-13) and np.allclose(a[1], b[1], atol=1e-13)


def test_transport(monkeypatch, stacks, rng):
    Ra, ta, _, _ = stacks
    covs = np.stack([spd(rng) for _ in range(40)])
    a = se3.transport_batch(covs, Ra, ta)
    b = with_numpy(monkeypatch, se3.transport_batch, covs, Ra, ta)
    assert np.allclose(a, b, atol=1e-14)
    # broadcast of one pose over many covariances
    a = se3.transport_batch(covs, Ra[0], ta[0])
    b = with_numpy(monkeypatch, se3.transport_batch, covs, Ra[0], ta[0])
    assert a.shape == (40, 6, 6) and np.allclose(a, b, atol=1e-14)


def test_pairwise(monkeypatch, stacks):
    Ra, ta, _, _ = stacks
    a = se3.pairwise_log(Ra[:12], ta[:12])
    b = with_numpy(monkeypatch, se3.pairwise_log, Ra[:12], ta[:12])
    assert np.allclose(a, b, atol=1e-12)
