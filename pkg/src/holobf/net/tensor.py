"""A small reverse-mode autodiff over NCHW float64 arrays.

Each op returns a new :class:`Tensor4` remembering its parents and a closure
that maps the output gradient to parent gradients. :func:`backward` walks the
graph in reverse topological order; gradient accumulation order is fixed by
the graph, so results are bitwise reproducible.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import NonFiniteValue, ShapeMismatch

DEBUG_FINITE = False


class Tensor4:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad")

    def __init__(self, value, parents: Sequence[Tensor4] = (), backward_fn: Callable | None = None,
                 requires_grad: bool = False):
        value = np.asarray(value, dtype=np.float64)
        if value.ndim != 4:
            raise ShapeMismatch(f"Tensor4 needs 4 dims, got shape {value.shape}")
        if DEBUG_FINITE and not np.all(np.isfinite(value)):
            raise NonFiniteValue("non-finite value produced")
        self.value = value
        self.grad: np.ndarray | None = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)

    @property
    def shape(self):
        return self.value.shape

    def detach(self) -> Tensor4:
        return Tensor4(self.value)

    def item(self) -> float:
        return float(self.value.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor4(shape={self.shape}, requires_grad={self.requires_grad})"


def param(value) -> Tensor4:
    return Tensor4(value, requires_grad=True)


def _node(value, parents, fn) -> Tensor4:
    parents = tuple(parents)
    if not any(p.requires_grad for p in parents):
        return Tensor4(value)
    return Tensor4(value, parents, fn)


def backward(out: Tensor4, grad: np.ndarray | None = None) -> None:
    """Accumulate d(out)/d(leaf) into ``.grad`` of every leaf that requires grad."""
    order: list[Tensor4] = []
    seen: set[int] = set()
    stack = [(out, False)]
    while stack:
        t, done = stack.pop()
        if done:
            order.append(t)
            continue
        if id(t) in seen or not t.requires_grad:
            continue
        seen.add(id(t))
        stack.append((t, True))
        for p in reversed(t.parents):
            stack.append((p, False))
    grads: dict[int, np.ndarray] = {id(out): np.ones_like(out.value) if grad is None else grad}
    for t in reversed(order):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t.backward_fn is None:
            t.grad = g if t.grad is None else t.grad + g
            continue
        for p, pg in zip(t.parents, t.backward_fn(g)):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            grads[key] = pg if key not in grads else grads[key] + pg


# ---------------------------------------------------------------------------
# convolution


def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :oh, :ow]
    n, c = xp.shape[:2]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)


def conv2d(x: Tensor4, kernel: Tensor4, bias: Tensor4 | None = None, stride: int = 1,
           pad: int | None = None) -> Tensor4:
    """Cross-correlation with zero padding; ``pad=None`` means ``kh // 2`` (same-style).

    ``kernel`` has shape (oc, ic, kh, kw) and ``bias`` shape (oc, 1, 1, 1).
    """
    n, c, h, w = x.shape
    oc, ic, kh, kw = kernel.shape
    if ic != c:
        raise ShapeMismatch(f"kernel expects {ic} input channels, input has {c}")
    if bias is not None and bias.value.size != oc:
        raise ShapeMismatch(f"bias has {bias.value.size} entries for {oc} output channels")
    if pad is None:
        pad = kh // 2
    oh, ow = conv_output_size(h, kh, stride, pad), conv_output_size(w, kw, stride, pad)
    if oh < 1 or ow < 1:
        raise ShapeMismatch(f"input {h}x{w} too small for kernel {kh}x{kw}")
    xp = np.pad(x.value, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.value
    cols = _im2col(xp, kh, kw, stride, oh, ow)
    wmat = kernel.value.reshape(oc, -1)
    out = cols @ wmat.T
    if bias is not None:
        out += bias.value.reshape(1, oc)
    value = out.reshape(n, oh, ow, oc).transpose(0, 3, 1, 2)

    def fn(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, oc)
        gk = (g2.T @ cols).reshape(kernel.shape) if kernel.requires_grad else None
        gb = g2.sum(axis=0).reshape(bias.shape) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            dcols = (g2 @ wmat).reshape(n, oh, ow, c, kh, kw)
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += \
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            gx = gxp[:, :, pad:pad + h, pad:pad + w] if pad else gxp
        return gx, gk, gb

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _node(np.ascontiguousarray(value), parents, fn)


# ---------------------------------------------------------------------------
# elementwise and reshaping ops


def leaky_relu(x: Tensor4, slope: float = 0.2) -> Tensor4:
    pos = x.value > 0
    value = np.where(pos, x.value, slope * x.value)
    return _node(value, (x,), lambda g: (np.where(pos, g, slope * g),))


def tanh(x: Tensor4) -> Tensor4:
    t = np.tanh(x.value)
    return _node(t, (x,), lambda g: (g * (1.0 - t * t),))


def sigmoid(x: Tensor4) -> Tensor4:
    s = 0.5 * (1.0 + np.tanh(0.5 * x.value))
    return _node(s, (x,), lambda g: (g * s * (1.0 - s),))


def tanh_out(x: Tensor4) -> Tensor4:
    """tanh mapped to (0, 1): (tanh(x) + 1) / 2."""
    t = np.tanh(x.value)
    return _node(0.5 * (t + 1.0), (x,), lambda g: (0.5 * g * (1.0 - t * t),))


def upsample_nearest(x: Tensor4, factor: int = 2) -> Tensor4:
    value = x.value.repeat(factor, axis=2).repeat(factor, axis=3)

    def fn(g):
        n, c, h, w = x.shape
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return _node(value, (x,), fn)


def concat(tensors: Sequence[Tensor4], axis: int = 1) -> Tensor4:
    sizes = [t.shape[axis] for t in tensors]
    value = np.concatenate([t.value for t in tensors], axis=axis)
    cuts = np.cumsum(sizes)[:-1]
    return _node(value, tensors, lambda g: tuple(np.split(g, cuts, axis=axis)))


def add(a: Tensor4, b: Tensor4) -> Tensor4:
    return _node(a.value + b.value, (a, b), lambda g: (g, g))


def offset(a: Tensor4, c) -> Tensor4:
    """``a + c`` for a constant ``c`` broadcastable to ``a``."""
    return _node(a.value + np.asarray(c, dtype=np.float64), (a,), lambda g: (g,))


def scale(a: Tensor4, k: float) -> Tensor4:
    return _node(k * a.value, (a,), lambda g: (k * g,))


# ---------------------------------------------------------------------------
# scalar reductions (returned as 1x1x1x1 tensors)


def _scalar(v: float) -> np.ndarray:
    return np.full((1, 1, 1, 1), v)


def mean_sq_dev(x: Tensor4, target: float) -> Tensor4:
    """mean((x - target)^2)"""
    d = x.value - target
    n = d.size
    return _node(_scalar(np.mean(d * d)), (x,), lambda g: (g.reshape(()) * 2.0 * d / n,))


def mean_abs_diff(x: Tensor4, y: Tensor4 | np.ndarray) -> Tensor4:
    yv = y.value if isinstance(y, Tensor4) else np.asarray(y)
    d = x.value - yv
    n = d.size
    val = _scalar(np.mean(np.abs(d)))
    if isinstance(y, Tensor4):
        return _node(val, (x, y), lambda g: (g.reshape(()) * np.sign(d) / n, -g.reshape(()) * np.sign(d) / n))
    return _node(val, (x,), lambda g: (g.reshape(()) * np.sign(d) / n,))
