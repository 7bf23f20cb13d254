"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

A Tensor records the op that produced it (parents plus a closure computing
parent gradients from its own gradient); ``backward`` topologically sorts
the recorded graph and accumulates exact gradients. Conventions: the
subgradient of |x| and of relu at 0 is 0. Matrix products use BLAS through
numpy; fused layer-norm, softmax and loss passes go through the kernel
backend (numba or numpy, see ``dbsfm.kernels``).

Gradient tracking can be suspended with ``no_grad()`` for inference paths.
"""

import contextlib

import numpy as np

from dbsfm import kernels
from dbsfm.errors import GraphStateError, NumericError, ValidationError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward_fn = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _make(data, parents, backward_fn):
    """Wrap an op result, recording the graph only when tracking is on."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward_fn = backward_fn
    return out


def _accumulate(tensor, grad):
    if tensor.grad is None:
        tensor.grad = grad.copy() if isinstance(grad, np.ndarray) else np.asarray(grad)
    else:
        tensor.grad = tensor.grad + grad


def backward(loss: Tensor) -> None:
    """Propagate d(loss)/d(node) through the recorded graph.

    loss must be a scalar produced by recorded ops; leaves with
    requires_grad get ``.grad`` populated (accumulated across paths).
    """
    if loss.data.ndim != 0:
        raise ValidationError("backward requires a scalar loss")
    if loss._backward_fn is None:
        raise GraphStateError(
            "loss has no recorded computation; run a forward pass with gradient "
            "tracking enabled before calling backward"
        )
    if not np.isfinite(loss.data):
        raise NumericError("loss is not finite")

    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))

    loss.grad = np.asarray(1.0)
    for node in reversed(order):
        if node._backward_fn is None or node.grad is None:
            continue
        for parent, grad in zip(node._parents, node._backward_fn(node.grad)):
            if parent.requires_grad and grad is not None:
                _accumulate(parent, grad)


# ---------------------------------------------------------------------------
# ops
# ---------------------------------------------------------------------------


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w + b where x is (..., F), w is (F, D), b is (D,)."""
    lead = x.data.shape[:-1]
    fan_in = x.data.shape[-1]
    x2 = x.data.reshape(-1, fan_in)
    y2 = x2 @ w.data
    if b is not None:
        y2 = y2 + b.data
    y = y2.reshape(*lead, w.data.shape[1])

    def backward_fn(g):
        g2 = g.reshape(-1, w.data.shape[1])
        dx = (g2 @ w.data.T).reshape(x.data.shape) if x.requires_grad else None
        dw = x2.T @ g2 if w.requires_grad else None
        if b is None:
            return dx, dw
        db = g2.sum(axis=0) if b.requires_grad else None
        return dx, dw, db

    parents = (x, w) if b is None else (x, w, b)
    return _make(y, parents, backward_fn)


def bmm(a: Tensor, b: Tensor, transpose_b: bool = False) -> Tensor:
    """Batched matmul on (..., T, d) stacks; optionally a @ b^T."""
    bd = np.swapaxes(b.data, -1, -2) if transpose_b else b.data
    y = np.matmul(a.data, bd)

    def backward_fn(g):
        if transpose_b:
            da = np.matmul(g, b.data) if a.requires_grad else None
            db = np.matmul(np.swapaxes(g, -1, -2), a.data) if b.requires_grad else None
        else:
            da = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
            db = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return da, db

    return _make(y, (a, b), backward_fn)


def add(x: Tensor, y: Tensor) -> Tensor:
    if x.data.shape != y.data.shape:
        raise ValidationError("add requires identical shapes")
    return _make(x.data + y.data, (x, y), lambda g: (g, g))


def add_broadcast(x: Tensor, p: Tensor) -> Tensor:
    """x + p where p's shape is a trailing suffix of x's (e.g. positions)."""
    extra = x.data.ndim - p.data.ndim
    if extra < 0 or x.data.shape[extra:] != p.data.shape:
        raise ValidationError("p must broadcast over leading axes of x")
    axes = tuple(range(extra))

    def backward_fn(g):
        dx = g if x.requires_grad else None
        dp = g.sum(axis=axes) if p.requires_grad and axes else (g if p.requires_grad else None)
        return dx, dp

    return _make(x.data + p.data, (x, p), backward_fn)


def scale(x: Tensor, c: float) -> Tensor:
    return _make(x.data * c, (x,), lambda g: (g * c,))


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return _make(np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,))


def prepend_cls(cls_vec: Tensor, x: Tensor) -> Tensor:
    """Stack a learned (D,) vector as row 0 of every (B, T, D) sequence."""
    bsz = x.data.shape[0]
    row = np.broadcast_to(cls_vec.data, (bsz, 1, cls_vec.data.shape[0]))
    y = np.concatenate([row, x.data], axis=1)

    def backward_fn(g):
        dcls = g[:, 0, :].sum(axis=0) if cls_vec.requires_grad else None
        dx = g[:, 1:, :] if x.requires_grad else None
        return dcls, dx

    return _make(y, (cls_vec, x), backward_fn)


def drop_first_row(x: Tensor) -> Tensor:
    """(B, T, D) -> (B, T-1, D), removing the CLS position."""

    def backward_fn(g):
        dx = np.zeros_like(x.data)
        dx[:, 1:, :] = g
        return (dx,)

    return _make(x.data[:, 1:, :], (x,), backward_fn)


def split_heads(x: Tensor, n_heads: int) -> Tensor:
    """(B, T, D) -> (B, H, T, D/H)."""
    bsz, t, d = x.data.shape
    hd = d // n_heads
    y = x.data.reshape(bsz, t, n_heads, hd).transpose(0, 2, 1, 3)

    def backward_fn(g):
        return (g.transpose(0, 2, 1, 3).reshape(bsz, t, d),)

    return _make(y, (x,), backward_fn)


def merge_heads(x: Tensor) -> Tensor:
    """(B, H, T, dh) -> (B, T, H*dh)."""
    bsz, h, t, hd = x.data.shape
    y = x.data.transpose(0, 2, 1, 3).reshape(bsz, t, h * hd)

    def backward_fn(g):
        return (g.reshape(bsz, t, h, hd).transpose(0, 2, 1, 3),)

    return _make(y, (x,), backward_fn)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float) -> Tensor:
    """Normalization over the last axis, then per-feature gain and bias."""
    lead = x.data.shape[:-1]
    d = x.data.shape[-1]
    x2 = np.ascontiguousarray(x.data.reshape(-1, d))
    y2, xhat, rstd = kernels.layer_norm_fwd(x2, gain.data, bias.data, eps)

    def backward_fn(g):
        g2 = np.ascontiguousarray(g.reshape(-1, d))
        dx2, dgain, dbias = kernels.layer_norm_bwd(g2, xhat, rstd, gain.data)
        dx = dx2.reshape(x.data.shape) if x.requires_grad else None
        return dx, (dgain if gain.requires_grad else None), (dbias if bias.requires_grad else None)

    return _make(y2.reshape(*lead, d), (x, gain, bias), backward_fn)


def softmax_last(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    lead = x.data.shape[:-1]
    d = x.data.shape[-1]
    y2 = kernels.softmax_fwd(np.ascontiguousarray(x.data.reshape(-1, d)))

    def backward_fn(g):
        g2 = np.ascontiguousarray(g.reshape(-1, d))
        return (kernels.softmax_bwd(g2, y2).reshape(x.data.shape),)

    return _make(y2.reshape(*lead, d), (x,), backward_fn)


def masked_wmae_loss(pred: Tensor, target: np.ndarray, weights: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean over masked-token elements of |w * (target - pred)|.

    pred: (B, T, F) Tensor; target (B, T, F), weights (F,), mask (B, T) bool
    are constants. Masked tokens contribute all F elements to the mean.
    """
    target = np.ascontiguousarray(target, dtype=np.float64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    mask = np.ascontiguousarray(mask, dtype=bool)
    if pred.data.shape != target.shape:
        raise ValidationError("prediction and target shapes differ")
    if mask.shape != pred.data.shape[:2]:
        raise ValidationError("mask shape must be (batch, tokens)")
    n_masked = int(mask.sum())
    if n_masked == 0:
        raise ValidationError("mask must select at least one token")
    n_elements = n_masked * pred.data.shape[2]
    loss = kernels.masked_wmae_fwd(target, pred.data, weights, mask)

    def backward_fn(g):
        return (kernels.masked_wmae_bwd(target, pred.data, weights, mask, float(g) / n_elements),)

    return _make(loss, (pred,), backward_fn)


def mse_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean squared error against a constant target of the same shape."""
    target = np.asarray(target, dtype=np.float64)
    if pred.data.shape != target.shape:
        raise ValidationError("prediction and target shapes differ")
    diff = pred.data - target
    loss = float(np.mean(diff * diff))

    def backward_fn(g):
        return (g * 2.0 * diff / diff.size,)

    return _make(loss, (pred,), backward_fn)
