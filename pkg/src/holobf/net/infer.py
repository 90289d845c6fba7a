"""Full-field inference by overlapping tiles with linear feathering."""

from __future__ import annotations

import numpy as np

from ..dataset import encode_field
from ..errors import BadDims
from ..fields import ComplexField, RealImage
from .models import Params, config_from_params, generator_forward
from .tensor import Tensor4


def _starts(size: int, tile: int, step: int) -> list[int]:
    if size <= tile:
        return [0]
    s = list(range(0, size - tile + 1, step))
    if s[-1] != size - tile:
        s.append(size - tile)
    return s


def feather_weights(tile: int, overlap: int) -> np.ndarray:
    """Separable ramp rising linearly over ``overlap`` pixels at each tile edge."""
    if overlap <= 0:
        return np.ones((tile, tile))
    i = np.arange(tile)
    ramp = np.minimum(1.0, np.minimum(i + 1, tile - i) / (overlap + 1))
    return np.outer(ramp, ramp)


def infer(weights: Params, bp_field: ComplexField, patch_size: int = 64, chunk: int = 8) -> RealImage:
    """Bright-field-equivalent RGB image for a back-propagated field."""
    gcfg = config_from_params(weights)
    if patch_size % gcfg.multiple:
        raise BadDims(f"patch size {patch_size} is not divisible by 2^depth = {gcfg.multiple}")
    x = encode_field(bp_field)
    _, H, W = x.shape
    # edge-pad small fields up to one tile
    ph, pw = max(H, patch_size), max(W, patch_size)
    if (ph, pw) != (H, W):
        x = np.pad(x, ((0, 0), (0, ph - H), (0, pw - W)), mode="edge")
    overlap = patch_size // 4
    step = patch_size - overlap
    ys, xs = _starts(ph, patch_size, step), _starts(pw, patch_size, step)
    coords = [(y0, x0) for y0 in ys for x0 in xs]
    if len(coords) == 1:
        out = generator_forward(weights, Tensor4(x[None]), gcfg).value[0]
    else:
        acc = np.zeros((gcfg.out_channels, ph, pw))
        wsum = np.zeros((ph, pw))
        wt = feather_weights(patch_size, overlap)
        for s in range(0, len(coords), chunk):
            part = coords[s:s + chunk]
            batch = np.stack([x[:, y0:y0 + patch_size, x0:x0 + patch_size] for y0, x0 in part])
            pred = generator_forward(weights, Tensor4(batch), gcfg).value
            for (y0, x0), p in zip(part, pred):
                acc[:, y0:y0 + patch_size, x0:x0 + patch_size] += p * wt
                wsum[y0:y0 + patch_size, x0:x0 + patch_size] += wt
        out = acc / wsum
    out = np.clip(out[:, :H, :W], 0.0, 1.0)
    return RealImage(np.moveaxis(out, 0, -1))
