"""A small reverse-mode autodiff engine on numpy arrays.

Only the operations CadeNet needs are provided.  Heavy ones (convolution,
batch norm, softmax) have fused backward rules; everything runs in float64.
"""

from __future__ import annotations

import math

import numba
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NoForwardRecorded, ShapeMismatch

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@numba.njit(cache=True)
def _gelu_kernel(x, out, slope):
    flat, fo, fs = x.ravel(), out.ravel(), slope.ravel()
    for i in range(flat.size):
        v = flat[i]
        cdf = 0.5 * (1.0 + math.erf(v * _INV_SQRT2))
        fo[i] = v * cdf
        fs[i] = cdf + v * math.exp(-0.5 * v * v) * _INV_SQRT_2PI


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        backward(self, grad)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward):
    parents = tuple(p for p in parents)
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data)
    return Tensor(data, requires_grad=True, parents=parents, backward=backward)


def backward(root: Tensor, grad=None):
    """Accumulate d(root)/d(leaf) into ``.grad`` of every leaf that requires it."""
    if not root.requires_grad or (root._backward is None and not root._parents):
        raise NoForwardRecorded("tensor has no recorded computation to differentiate")
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    grads = {id(root): np.ones_like(root.data) if grad is None else np.asarray(grad, float)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node._accumulate(g)
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ------------------------------------------------------------ elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def scale(a, c: float):
    return _result(a.data * c, (a,), lambda g: (g * c,))


def gelu(x):
    """Exact GELU, ``x * Phi(x)``."""
    data = np.ascontiguousarray(x.data)
    out = np.empty_like(data)
    slope = np.empty_like(data)
    _gelu_kernel(data, out, slope)
    return _result(out, (x,), lambda g: (g * slope,))


def dropout(x, rate: float, rng, training: bool):
    if not training or rate <= 0:
        return x
    mask = (rng.random(x.shape, dtype=np.float32) >= rate) * (1.0 / (1.0 - rate))
    return _result(x.data * mask, (x,), lambda g: (g * mask,))


# ------------------------------------------------------------ shape

def reshape(x, shape):
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes):
    inv = np.argsort(axes)
    return _result(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def broadcast_to(x, shape):
    return _result(np.broadcast_to(x.data, shape).copy(), (x,),
                   lambda g: (_unbroadcast(g, x.shape),))


def take(x, index, axis):
    """``x`` sliced to a single index along ``axis`` (axis dropped)."""
    out = np.take(x.data, index, axis=axis)

    def bw(g):
        full = np.zeros_like(x.data)
        sl = [slice(None)] * x.data.ndim
        sl[axis] = index
        full[tuple(sl)] = g
        return (full,)
    return _result(out, (x,), bw)


def slice_axis(x, start, stop, axis):
    sl = [slice(None)] * x.data.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)

    def bw(g):
        full = np.zeros_like(x.data)
        full[sl] = g
        return (full,)
    return _result(x.data[sl], (x,), bw)


def concat(xs, axis):
    sizes = [t.shape[axis] for t in xs]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(xs)))
    return _result(np.concatenate([t.data for t in xs], axis=axis), tuple(xs), bw)


# ------------------------------------------------------------ linear algebra

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb
    return _result(a.data @ b.data, (a, b), bw)


def conv1d(x, weight, bias=None):
    """Same-length 1-D convolution (cross-correlation) along the second-to-last axis.

    ``x``: (..., L, D_in), channels last; ``weight``: (D_out, D_in, k) with odd
    k; zero padding of (k - 1) / 2 on both sides of the time axis.
    """
    *lead, L, d_in = x.shape
    d_out, w_in, k = weight.shape
    if w_in != d_in:
        raise ShapeMismatch(f"conv expects {w_in} input channels, got {d_in}")
    if k % 2 != 1:
        raise ShapeMismatch(f"kernel size must be odd, got {k}")
    pad = (k - 1) // 2
    n = int(np.prod(lead)) if lead else 1
    span = L + 2 * pad
    xp = np.zeros((n, span, d_in))
    xp[:, pad:pad + L] = x.data.reshape(n, L, d_in)
    # one GEMM for all taps: (n*span, D_in) @ (D_in, k*D_out)
    wcat = weight.data.transpose(1, 2, 0).reshape(d_in, k * d_out)
    taps = (xp.reshape(n * span, d_in) @ wcat).reshape(n, span, k, d_out)
    out = taps[:, 0:L, 0].copy()
    for j in range(1, k):
        out += taps[:, j:j + L, j]
    if bias is not None:
        out += bias.data
    out = out.reshape(*lead, L, d_out)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        g2 = g.reshape(n, L, d_out)
        gflat = g2.reshape(n * L, d_out)
        gw = None
        if weight.requires_grad:
            gw = np.empty_like(weight.data)
            for j in range(k):
                gw[:, :, j] = gflat.T @ xp[:, j:j + L].reshape(n * L, d_in)
        gx = None
        if x.requires_grad:
            wstack = weight.data.transpose(0, 2, 1).reshape(d_out, k * d_in)
            gcols = (gflat @ wstack).reshape(n, L, k, d_in)
            gxp = np.zeros((n, span, d_in))
            for j in range(k):
                gxp[:, j:j + L] += gcols[:, :, j]
            gx = gxp[:, pad:pad + L].reshape(x.shape)
        if bias is None:
            return gx, gw
        return gx, gw, gflat.sum(axis=0)
    return _result(out, parents, bw)


def batch_norm(x, gamma, beta, running_mean, running_var, training: bool,
               momentum: float = 0.1, eps: float = 1e-5):
    """Batch norm of a channels-last tensor: statistics over all but the last axis.

    In training mode the running statistics (plain arrays) are updated in place.
    """
    d = x.shape[-1]
    flat = x.data.reshape(-1, d)
    m = flat.shape[0]
    if training:
        mean = flat.mean(axis=0)
        var = flat.var(axis=0)
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * var * (m / max(m - 1, 1))
    else:
        mean, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (flat - mean) * inv
    out = (xhat * gamma.data + beta.data).reshape(x.shape)

    def bw(g):
        g = g.reshape(-1, d)
        gg = (g * xhat).sum(axis=0)
        gb = g.sum(axis=0)
        gxhat = g * gamma.data
        if training:
            gx = (inv / m) * (m * gxhat - gxhat.sum(axis=0) - xhat * (gxhat * xhat).sum(axis=0))
        else:
            gx = gxhat * inv
        return gx.reshape(x.shape), gg, gb
    return _result(out, (x, gamma, beta), bw)


def softmax(x, axis=-1):
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)
    return _result(p, (x,), bw)


def log_softmax(x, axis=-1):
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def bw(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)
    return _result(out, (x,), bw)


# ------------------------------------------------------------ reductions

def mean(x, axis):
    axis = tuple(axis) if isinstance(axis, (tuple, list)) else (axis,)
    n = int(np.prod([x.shape[a] for a in axis]))
    out = x.data.mean(axis=axis)

    def bw(g):
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape) / n,)
    return _result(out, (x,), bw)


def amax(x, axis):
    """Max over ``axis``; the gradient goes to the first maximal element."""
    axis = tuple(axis) if isinstance(axis, (tuple, list)) else (axis,)
    keep = [a for a in range(x.data.ndim) if a not in axis]
    moved = np.transpose(x.data, keep + list(axis))
    flat = moved.reshape(moved.shape[:len(keep)] + (-1,))
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def bw(g):
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, idx[..., None], g[..., None], axis=-1)
        gmoved = gflat.reshape(moved.shape)
        return (np.transpose(gmoved, np.argsort(keep + list(axis))),)
    return _result(out, (x,), bw)


def sum_all(x):
    return _result(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))
