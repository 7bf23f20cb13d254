"""Numba and numpy kernel backends compute the same quantities."""

import subprocess
import sys

import numpy as np
import pytest

from dbsfm.kernels import _numba, _numpy

RNG = np.random.default_rng(77)


def test_layer_norm_fwd_backends_agree():
    x = RNG.normal(size=(12, 9))
    gain = RNG.uniform(0.5, 1.5, size=9)
    bias = RNG.normal(size=9)
    y_a, xhat_a, rstd_a = _numpy.layer_norm_fwd(x, gain, bias, 1e-5)
    y_b, xhat_b, rstd_b = _numba.layer_norm_fwd(x, gain, bias, 1e-5)
    np.testing.assert_allclose(y_a, y_b, atol=1e-13)
    np.testing.assert_allclose(xhat_a, xhat_b, atol=1e-13)
    np.testing.assert_allclose(rstd_a, rstd_b, atol=1e-13)


def test_layer_norm_bwd_backends_agree():
    x = RNG.normal(size=(8, 6))
    gain = RNG.uniform(0.5, 1.5, size=6)
    dy = RNG.normal(size=(8, 6))
    _, xhat, rstd = _numpy.layer_norm_fwd(x, gain, np.zeros(6), 1e-5)
    outs_a = _numpy.layer_norm_bwd(dy, xhat, rstd, gain)
    outs_b = _numba.layer_norm_bwd(dy, xhat, rstd, gain)
    for a, b in zip(outs_a, outs_b):
        np.testing.assert_allclose(a, b, atol=1e-13)


def test_softmax_backends_agree():
    x = RNG.normal(size=(10, 16)) * 3.0
    y_a = _numpy.softmax_fwd(x)
    y_b = _numba.softmax_fwd(x)
    np.testing.assert_allclose(y_a, y_b, atol=1e-15)
    np.testing.assert_allclose(y_b.sum(axis=1), 1.0, atol=1e-12)
    dy = RNG.normal(size=(10, 16))
    np.testing.assert_allclose(
        _numpy.softmax_bwd(dy, y_a), _numba.softmax_bwd(dy, y_b), atol=1e-14
    )


def test_adamw_backends_agree():
    def run(mod):
        p = np.linspace(-1, 1, 40)
        g = RNG2.normal(size=40)
        m = np.zeros(40)
        v = np.zeros(40)
        for t in range(1, 4):
            mod.adamw_update(p, g, m, v, 1e-3, 0.9, 0.95, 1e-8, 0.01, 1 - 0.9**t, 1 - 0.95**t)
        return p, m, v

    RNG2 = np.random.default_rng(5)
    p_a, m_a, v_a = run(_numpy)
    RNG2 = np.random.default_rng(5)
    p_b, m_b, v_b = run(_numba)
    np.testing.assert_allclose(p_a, p_b, atol=1e-15)
    np.testing.assert_allclose(m_a, m_b, atol=1e-15)
    np.testing.assert_allclose(v_a, v_b, atol=1e-15)


def test_masked_wmae_backends_agree():
    target = RNG.normal(size=(3, 5, 7))
    pred = RNG.normal(size=(3, 5, 7))
    w = RNG.uniform(0.1, 2.0, size=7)
    mask = RNG.random((3, 5)) < 0.4
    mask[0, 0] = True
    loss_a = _numpy.masked_wmae_fwd(target, pred, w, mask)
    loss_b = _numba.masked_wmae_fwd(target, pred, w, mask)
    assert loss_a == pytest.approx(loss_b, rel=1e-14)
    d_a = _numpy.masked_wmae_bwd(target, pred, w, mask, 0.013)
    d_b = _numba.masked_wmae_bwd(target, pred, w, mask, 0.013)
    np.testing.assert_allclose(d_a, d_b, atol=1e-16)


@pytest.mark.parametrize("backend", ["numpy", "numba"])
def test_backend_env_selection(backend):
    code = "from dbsfm import kernels; print(kernels.BACKEND)"
    out = subprocess.run(
        [sys.executable, "-c", code],
        capture_output=True,
        text=True,
        env={"PATH": "/usr/bin:/bin", "DBSFM_BACKEND": backend},
    )
    assert out.returncode == 0, out.stderr
    assert out.stdout.strip() == backend


def test_backend_env_invalid_value_rejected():
    code = "import dbsfm.kernels"
    out = subprocess.run(
        [sys.executable, "-c", code],
        capture_output=True,
        text=True,
        env={"PATH": "/usr/bin:/bin", "DBSFM_BACKEND": "cuda"},
    )
    assert out.returncode != 0
    assert "DBSFM_BACKEND" in out.stderr
