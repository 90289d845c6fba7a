"""Central finite-difference checks for the hand-written backward passes."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor4


def relative_error(fd: np.ndarray, an: np.ndarray) -> float:
    return float(np.max(np.abs(fd - an) / np.maximum(1e-8, np.abs(fd) + np.abs(an))))


def gradient_check(fn: Callable[[Sequence[Tensor4]], Tensor4], inputs: Sequence[np.ndarray],
                   step: float = 1e-5, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` maps leaf tensors to an output tensor; it is reduced to a scalar by
    a fixed random projection so every output element contributes.
    """
    leaves = [T.param(np.array(v, dtype=np.float64)) for v in inputs]
    out = fn(leaves)
    proj = np.random.default_rng(seed).standard_normal(out.shape)
    T.backward(out, proj)
    analytic = [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value) for leaf in leaves]

    def scalar(values):
        return float(np.sum(fn([Tensor4(v) for v in values]).value * proj))

    worst = 0.0
    base = [leaf.value.copy() for leaf in leaves]
    for k, v in enumerate(base):
        fd = np.zeros_like(v)
        flat = v.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = scalar(base)
            flat[i] = orig - step
            lo = scalar(base)
            flat[i] = orig
            fd.reshape(-1)[i] = (hi - lo) / (2 * step)
        worst = max(worst, relative_error(fd, analytic[k]))
    return worst
