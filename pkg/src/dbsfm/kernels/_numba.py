"""Numba-jitted kernel implementations (default backend).

Loop-level versions of the fns in ``_numpy.py``; same signatures, same math.
All kernels take and return float64 arrays and are compiled lazily with
on-disk caching, so the first call in a fresh environment pays the JIT cost
once.
"""

import numpy as np
from numba import njit

_JIT = dict(cache=True, nogil=True, fastmath=False)


@njit(**_JIT)
def layer_norm_fwd(x, gain, bias, eps):
    n, d = x.shape
    y = np.empty((n, d))
    xhat = np.empty((n, d))
    rstd = np.empty(n)
    for i in range(n):
        mu = 0.0
        for j in range(d):
            mu += x[i, j]
        mu /= d
        var = 0.0
        for j in range(d):
            c = x[i, j] - mu
            var += c * c
        var /= d
        r = 1.0 / np.sqrt(var + eps)
        rstd[i] = r
        for j in range(d):
            h = (x[i, j] - mu) * r
            xhat[i, j] = h
            y[i, j] = h * gain[j] + bias[j]
    return y, xhat, rstd


@njit(**_JIT)
def layer_norm_bwd(dy, xhat, rstd, gain):
    n, d = dy.shape
    dx = np.empty((n, d))
    dgain = np.zeros(d)
    dbias = np.zeros(d)
    for i in range(n):
        m1 = 0.0
        m2 = 0.0
        for j in range(d):
            dg = dy[i, j]
            h = xhat[i, j]
            dgain[j] += dg * h
            dbias[j] += dg
            dxh = dg * gain[j]
            m1 += dxh
            m2 += dxh * h
        m1 /= d
        m2 /= d
        r = rstd[i]
        for j in range(d):
            dxh = dy[i, j] * gain[j]
            dx[i, j] = (dxh - m1 - xhat[i, j] * m2) * r
    return dx, dgain, dbias


@njit(**_JIT)
def softmax_fwd(x):
    n, d = x.shape
    y = np.empty((n, d))
    for i in range(n):
        hi = x[i, 0]
        for j in range(1, d):
            if x[i, j] > hi:
                hi = x[i, j]
        total = 0.0
        for j in range(d):
            e = np.exp(x[i, j] - hi)
            y[i, j] = e
            total += e
        for j in range(d):
            y[i, j] /= total
    return y


@njit(**_JIT)
def softmax_bwd(dy, y):
    n, d = dy.shape
    dx = np.empty((n, d))
    for i in range(n):
        s = 0.0
        for j in range(d):
            s += dy[i, j] * y[i, j]
        for j in range(d):
            dx[i, j] = y[i, j] * (dy[i, j] - s)
    return dx


@njit(**_JIT)
def adamw_update(p, g, m, v, lr, beta1, beta2, eps, wd, c1, c2):
    n = p.size
    decay = 1.0 - lr * wd
    for i in range(n):
        if wd != 0.0:
            p[i] *= decay
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
        p[i] -= lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + eps)


@njit(**_JIT)
def masked_wmae_fwd(target, pred, w, mask):
    b, t, f = target.shape
    total = 0.0
    count = 0
    for i in range(b):
        for j in range(t):
            if mask[i, j]:
                count += f
                for k in range(f):
                    total += abs(w[k] * (target[i, j, k] - pred[i, j, k]))
    return total / count


@njit(**_JIT)
def masked_wmae_bwd(target, pred, w, mask, scale):
    b, t, f = target.shape
    dpred = np.zeros((b, t, f))
    for i in range(b):
        for j in range(t):
            if mask[i, j]:
                for k in range(f):
                    u = w[k] * (target[i, j, k] - pred[i, j, k])
                    dpred[i, j, k] = -w[k] * np.sign(u) * scale
    return dpred
