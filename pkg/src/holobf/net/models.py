"""Encoder-decoder generator and patch discriminator built on :mod:`holobf.net.tensor`."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict

import numpy as np

from ..errors import ShapeMismatch
from ..simulate import derive_rng
from . import tensor as T
from .tensor import Tensor4

Params = Dict[str, Tensor4]


@dataclass(frozen=True)
class GeneratorConfig:
    in_channels: int = 2
    out_channels: int = 3
    base_width: int = 16
    depth: int = 3
    skip_connections: bool = True
    # depth 0 with head_kernel 1 is a single per-pixel linear layer (sanity runs)
    head_kernel: int = 3

    def __post_init__(self):
        if self.depth < 0:
            raise ShapeMismatch("depth must be >= 0")
        if self.base_width < 4:
            raise ShapeMismatch("base_width must be >= 4")
        if self.head_kernel % 2 != 1:
            raise ShapeMismatch("head_kernel must be odd")

    @property
    def multiple(self) -> int:
        return 2 ** self.depth


@dataclass(frozen=True)
class DiscriminatorConfig:
    in_channels: int = 5
    base_width: int = 16
    layers: int = 3

    def __post_init__(self):
        if self.layers < 1:
            raise ShapeMismatch("layers must be >= 1")


def _conv_init(rng: np.random.Generator, oc: int, ic: int, k: int) -> tuple[np.ndarray, np.ndarray]:
    b = np.sqrt(1.0 / (ic * k * k))
    return rng.uniform(-b, b, (oc, ic, k, k)), rng.uniform(-b, b, (oc, 1, 1, 1))


def generator_layout(cfg: GeneratorConfig) -> list[tuple[str, int, int, int]]:
    """(name, out_channels, in_channels, kernel) for every conv, in forward order."""
    B = cfg.base_width
    layers = []
    ch = [cfg.in_channels]
    c = cfg.in_channels
    for k in range(cfg.depth):
        layers.append((f"enc{k}", B * 2 ** k, c, 3))
        c = B * 2 ** k
        ch.append(c)
    for k in reversed(range(cfg.depth)):
        oc = B * 2 ** (k - 1) if k > 0 else B
        layers.append((f"dec{k}", oc, c, 3))
        c = oc + (ch[k] if cfg.skip_connections else 0)
    layers.append(("head", cfg.out_channels, c, cfg.head_kernel))
    return layers


def init_generator(cfg: GeneratorConfig, seed: int, zero_head: bool = False) -> Params:
    rng = derive_rng(seed, "generator_init")
    params: Params = {}
    for name, oc, ic, k in generator_layout(cfg):
        w, b = _conv_init(rng, oc, ic, k)
        if zero_head and name == "head":
            w, b = np.zeros_like(w), np.zeros_like(b)
        params[f"g.{name}.w"] = T.param(w)
        # only the head carries a bias: with a centered input the background then
        # maps to exactly zero features, so zero padding never invents edges
        if name == "head":
            params[f"g.{name}.b"] = T.param(b)
    return params


def discriminator_layout(cfg: DiscriminatorConfig) -> list[tuple[str, int, int, int]]:
    layers = []
    c = cfg.in_channels
    for k in range(cfg.layers):
        layers.append((f"conv{k}", cfg.base_width * 2 ** k, c, 3))
        c = cfg.base_width * 2 ** k
    layers.append(("out", 1, c, 3))
    return layers


def init_discriminator(cfg: DiscriminatorConfig, seed: int) -> Params:
    rng = derive_rng(seed, "discriminator_init")
    params: Params = {}
    for name, oc, ic, k in discriminator_layout(cfg):
        w, b = _conv_init(rng, oc, ic, k)
        params[f"d.{name}.w"] = T.param(w)
        params[f"d.{name}.b"] = T.param(b)
    return params


def generator_forward(params: Params, x: Tensor4, cfg: GeneratorConfig) -> Tensor4:
    n, c, h, w = x.shape
    if c != cfg.in_channels:
        raise ShapeMismatch(f"generator expects {cfg.in_channels} channels, got {c}")
    if h % cfg.multiple or w % cfg.multiple:
        raise ShapeMismatch(f"input {h}x{w} is not divisible by 2^depth = {cfg.multiple}")
    # the normalized background is the unit plane wave (re 1, im 0); centering it
    # makes zero padding look like background at every patch border
    ref = np.zeros((1, c, 1, 1))
    ref[0, 0] = 1.0
    t = T.offset(x, -ref)
    feats = [t]
    for k in range(cfg.depth):
        t = T.leaky_relu(T.conv2d(t, params[f"g.enc{k}.w"], stride=2))
        feats.append(t)
    for k in reversed(range(cfg.depth)):
        t = T.upsample_nearest(t, 2)
        t = T.leaky_relu(T.conv2d(t, params[f"g.dec{k}.w"]))
        if cfg.skip_connections:
            t = T.concat([t, feats[k]])
    return T.tanh_out(T.conv2d(t, params["g.head.w"], params["g.head.b"]))


def discriminator_forward(params: Params, x: Tensor4, y: Tensor4, cfg: DiscriminatorConfig) -> Tensor4:
    """Patch score map for the pair (input field, candidate bright-field image)."""
    t = T.concat([x, y])
    if t.shape[1] != cfg.in_channels:
        raise ShapeMismatch(f"discriminator expects {cfg.in_channels} channels, got {t.shape[1]}")
    for k in range(cfg.layers):
        t = T.leaky_relu(T.conv2d(t, params[f"d.conv{k}.w"], params[f"d.conv{k}.b"], stride=2))
    return T.conv2d(t, params["d.out.w"], params["d.out.b"])


def config_from_params(params: Params) -> GeneratorConfig:
    """Recover the generator configuration from its weight shapes."""
    enc = sorted(k for k in params if k.startswith("g.enc") and k.endswith(".w"))
    depth = len(enc)
    head = params["g.head.w"].shape
    if depth:
        first = params["g.enc0.w"].shape
        in_ch, base = first[1], first[0]
        dec0 = params["g.dec0.w"].shape
        skip = head[1] == dec0[0] + in_ch
    else:
        in_ch, base, skip = head[1], 16, True
    return GeneratorConfig(in_ch, head[0], base, depth, skip, head[2])


def discriminator_config_from_params(params: Params) -> DiscriminatorConfig | None:
    convs = sorted(k for k in params if k.startswith("d.conv") and k.endswith(".w"))
    if not convs:
        return None
    first = params["d.conv0.w"].shape
    return DiscriminatorConfig(first[1], first[0], len(convs))
