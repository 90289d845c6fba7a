"""Least-squares GAN training with an L1 content term."""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from ..dataset import PairedPatchSet, augment_arrays
from ..errors import EmptyDataset, ShapeMismatch
from ..simulate import derive_rng
from . import tensor as T
from .models import (
    DiscriminatorConfig,
    GeneratorConfig,
    Params,
    discriminator_forward,
    generator_forward,
    init_discriminator,
    init_generator,
)
from .tensor import Tensor4

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lambda_l1: float = 100.0
    lambda_adv: float = 1.0
    learning_rate: float = 1e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 4
    steps: int = 2000
    seed: int = 0
    val_every: int = 100
    augment: bool = True

    def __post_init__(self):
        if self.lambda_l1 < 0 or self.lambda_adv < 0:
            raise ValueError("loss weights must be >= 0")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.steps < 0:
            raise ValueError("learning_rate and batch_size must be positive, steps >= 0")


# ---------------------------------------------------------------------------
# losses


def gan_losses(g_out: Tensor4, target, d_real: Tensor4, d_fake: Tensor4,
               cfg: TrainConfig) -> dict[str, Tensor4]:
    """LSGAN losses.

    ``loss_g`` only sees ``d_fake`` and the L1 term, so when ``d_fake`` was
    computed from a live generator output gradients reach the generator;
    ``loss_d`` should be built from scores of a detached generator output.
    """
    if g_out.shape != np.shape(getattr(target, "value", target)):
        raise ShapeMismatch("generator output and target differ in shape")
    adv = T.scale(T.mean_sq_dev(d_fake, 1.0), cfg.lambda_adv)
    l1 = T.scale(T.mean_abs_diff(g_out, target), cfg.lambda_l1)
    loss_g = T.add(adv, l1)
    loss_d = T.add(T.scale(T.mean_sq_dev(d_real, 1.0), 0.5), T.scale(T.mean_sq_dev(d_fake, 0.0), 0.5))
    return {"loss_g": loss_g, "loss_d": loss_d}


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: AdamState,
              cfg: TrainConfig) -> tuple[Dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns new params and state, inputs untouched."""
    t = state.t + 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    new_p, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        if g.shape != p.shape:
            raise ShapeMismatch(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = b1 * state.m.get(name, np.zeros_like(p)) + (1 - b1) * g
        v = b2 * state.v.get(name, np.zeros_like(p)) + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        new_p[name] = p - cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.adam_eps)
        new_m[name], new_v[name] = m, v
    return new_p, AdamState(new_m, new_v, t)


def _values(params: Params) -> Dict[str, np.ndarray]:
    return {k: p.value for k, p in params.items()}


def _as_params(values: Dict[str, np.ndarray]) -> Params:
    return {k: T.param(v) for k, v in values.items()}


def _grads(params: Params) -> Dict[str, np.ndarray]:
    return {k: p.grad for k, p in params.items() if p.grad is not None}


# ---------------------------------------------------------------------------
# training loop


@dataclass
class History:
    rows: list = field(default_factory=list)

    def add(self, step: int, loss_g: float, loss_d: float, val_l1: float | None) -> None:
        self.rows.append((step, loss_g, loss_d, val_l1))

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("step,loss_g,loss_d,val_l1\n")
        for step, lg, ld, vl in self.rows:
            out.write(f"{step},{lg!r},{ld!r},{'' if vl is None else repr(vl)}\n")
        return out.getvalue()

    def val_l1(self) -> list[tuple[int, float]]:
        return [(s, v) for s, _, _, v in self.rows if v is not None]


@dataclass
class TrainResult:
    generator: Params
    discriminator: Params
    history: History
    initial_val_l1: float | None
    gcfg: GeneratorConfig
    dcfg: DiscriminatorConfig

    def weights(self) -> Params:
        return {**self.generator, **self.discriminator}


def _batch(ds: PairedPatchSet, idx, codes=None) -> tuple[np.ndarray, np.ndarray]:
    xs, ys = [], []
    for k, i in enumerate(idx):
        p = ds.patches[i]
        x, y = p.input, p.target
        if codes is not None:
            x, y = augment_arrays(x, y, int(codes[k]))
        xs.append(x)
        ys.append(y)
    return np.stack(xs), np.stack(ys)


def evaluate_l1(gen: Params, gcfg: GeneratorConfig, ds: PairedPatchSet, idx, chunk: int = 8) -> float | None:
    idx = list(idx)
    if not idx:
        return None
    total, count = 0.0, 0
    for s in range(0, len(idx), chunk):
        x, y = _batch(ds, idx[s:s + chunk])
        out = generator_forward(gen, Tensor4(x), gcfg).value
        total += float(np.abs(out - y).sum())
        count += y.size
    return total / count


def predict(gen: Params, gcfg: GeneratorConfig, x: np.ndarray, chunk: int = 8) -> np.ndarray:
    outs = [generator_forward(gen, Tensor4(x[s:s + chunk]), gcfg).value for s in range(0, len(x), chunk)]
    return np.concatenate(outs) if outs else np.zeros((0, gcfg.out_channels) + x.shape[2:])


def prior_head_bias(ds: PairedPatchSet, idx) -> np.ndarray:
    """Head bias that makes the initial output equal the per-channel median target.

    The targets' white background sits close to the top of the (tanh + 1) / 2
    range; starting the bias there keeps the optimizer from reaching it by
    inflating every layer instead.
    """
    y = np.stack([ds.patches[i].target for i in idx])
    med = np.clip(np.median(y, axis=(0, 2, 3)), 0.01, 0.99)
    return np.arctanh(2 * med - 1).reshape(-1, 1, 1, 1)


def train(ds: PairedPatchSet, gcfg: GeneratorConfig = GeneratorConfig(),
          dcfg: DiscriminatorConfig = DiscriminatorConfig(), tcfg: TrainConfig = TrainConfig(),
          zero_head: bool = False, progress=None) -> TrainResult:
    """Alternating discriminator / generator updates over the train split."""
    train_idx = list(ds.split["train"])
    if not train_idx:
        raise EmptyDataset("train split is empty")
    val_idx = list(ds.split["val"])
    gen = init_generator(gcfg, tcfg.seed, zero_head=zero_head)
    if not zero_head:
        gen["g.head.b"] = T.param(prior_head_bias(ds, train_idx))
    disc = init_discriminator(dcfg, tcfg.seed)
    g_state, d_state = AdamState(), AdamState()
    rng = derive_rng(tcfg.seed, "train_batches")
    history = History()
    initial = evaluate_l1(gen, gcfg, ds, val_idx) if tcfg.steps > 0 else None
    order: list[int] = []
    for step in range(1, tcfg.steps + 1):
        batch = []
        while len(batch) < tcfg.batch_size:
            if not order:
                order = [train_idx[i] for i in rng.permutation(len(train_idx))]
            batch.append(order.pop(0))
        codes = rng.integers(0, 8, size=len(batch)) if tcfg.augment else None
        xv, yv = _batch(ds, batch, codes)
        x, y = Tensor4(xv), Tensor4(yv)

        fake = generator_forward(gen, x, gcfg)
        # discriminator step on a detached fake
        d_real = discriminator_forward(disc, x, y, dcfg)
        d_fake = discriminator_forward(disc, x, fake.detach(), dcfg)
        loss_d = gan_losses(fake, yv, d_real, d_fake, tcfg)["loss_d"]
        T.backward(loss_d)
        new_d, d_state = adam_step(_values(disc), _grads(disc), d_state, tcfg)
        disc = _as_params(new_d)

        # generator step through the updated discriminator
        d_fake = discriminator_forward(disc, x, fake, dcfg)
        loss_g = gan_losses(fake, yv, d_real, d_fake, tcfg)["loss_g"]
        T.backward(loss_g)
        new_g, g_state = adam_step(_values(gen), _grads(gen), g_state, tcfg)
        gen = _as_params(new_g)
        for p in disc.values():
            p.grad = None

        val = None
        if step % tcfg.val_every == 0 or step == tcfg.steps:
            val = evaluate_l1(gen, gcfg, ds, val_idx)
            if progress is not None:
                progress(step, loss_g.item(), loss_d.item(), val)
            log.info("step %d loss_g %.4f loss_d %.4f val_l1 %s", step, loss_g.item(), loss_d.item(), val)
        history.add(step, loss_g.item(), loss_d.item(), val)
    return TrainResult(gen, disc, history, initial, gcfg, dcfg)
