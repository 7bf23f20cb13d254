"""Pure-numpy kernel implementations (fallback backend).

Every function here has a numba twin in ``_numba.py`` computing the same
quantities; see that module for the loop-level definitions.
"""

import numpy as np


def layer_norm_fwd(x, gain, bias, eps):
    """Row-wise layer norm of a 2-d array.

    Returns (y, xhat, rstd): the output, the normalized pre-gain rows, and
    the per-row reciprocal standard deviation (population variance + eps).
    """
    mu = x.mean(axis=1, keepdims=True)
    centered = x - mu
    var = np.mean(centered * centered, axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = centered * rstd
    y = xhat * gain + bias
    return y, xhat, rstd[:, 0]


def layer_norm_bwd(dy, xhat, rstd, gain):
    """Gradients of layer_norm_fwd. Returns (dx, dgain, dbias)."""
    dgain = (dy * xhat).sum(axis=0)
    dbias = dy.sum(axis=0)
    dxhat = dy * gain
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = (dxhat - m1 - xhat * m2) * rstd[:, None]
    return dx, dgain, dbias


def softmax_fwd(x):
    """Row softmax of a 2-d array."""
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_bwd(dy, y):
    """Gradient of row softmax: dx = y * (dy - sum(dy * y))."""
    s = (dy * y).sum(axis=1, keepdims=True)
    return y * (dy - s)


def adamw_update(p, g, m, v, lr, beta1, beta2, eps, wd, c1, c2):
    """One decoupled-weight-decay Adam step on flat 1-d views, in place.

    c1 = 1 - beta1**t and c2 = 1 - beta2**t are the bias-correction factors
    for the current step t. Decay is applied to the weights directly, before
    the moment-based step, and is not routed through the gradients.
    """
    if wd != 0.0:
        p *= 1.0 - lr * wd
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def masked_wmae_fwd(target, pred, w, mask):
    """Weighted MAE over masked tokens only.

    target, pred: (B, T, F); w: (F,) per-feature weights; mask: (B, T) bool.
    Returns the mean over all masked-token elements of |w * (target - pred)|.
    """
    diff = (target[mask] - pred[mask]) * w
    return float(np.abs(diff).sum() / diff.size)


def masked_wmae_bwd(target, pred, w, mask, scale):
    """d(loss)/d(pred) for masked_wmae_fwd; scale = upstream grad / n_elements."""
    dpred = np.zeros_like(pred)
    u = (target[mask] - pred[mask]) * w
    dpred[mask] = -w * np.sign(u) * scale
    return dpred
