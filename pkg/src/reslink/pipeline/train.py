"""Two-stage training: the base layer first, then the residual codec on top.

Both loops share the same plumbing: Adam with a flat-then-linear-decay
learning rate, GDN parameter projection after every step, a per-epoch loss
log and an abort (carrying the last good parameters) on non-finite losses.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from ..autodiff import Tensor, backward, ops
from ..autodiff.ops import BETA_MIN
from ..binarizer import binarize_ste
from ..link import BBEC, STRIDE, ChannelConfig, InterleaverSpec, transmit_bits
from ..nn import (
    BaseConfig,
    CodecConfig,
    ModelParams,
    bresnet_decode,
    bresnet_encode,
    init_base,
    init_enhancement,
    sumnet,
)
from ..nn.blocks import with_meta
from ..seeding import derive_seed, rng_for
from .data import Dataset
from .losses import LossWeights, loss_distance, rgan_losses
from .model import base_forward, synthesize_images

BASE_STAGE = "base"
RESIDUAL_STAGE = "residual"
JOINT_STAGE = "joint"
STAGES = (BASE_STAGE, RESIDUAL_STAGE, JOINT_STAGE)

LogFn = Callable[[dict], None]


class ConfigError(ValueError):
    pass


class TrainingDivergedError(FloatingPointError):
    """Raised on a non-finite loss; ``last_good`` holds the previous epoch's params."""

    def __init__(self, message: str, last_good: ModelParams, epoch: int):
        super().__init__(message)
        self.last_good = last_good
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    stage: str = RESIDUAL_STAGE
    flat_epochs: int = 10
    decay_epochs: int = 10
    learning_rate: float = 1e-3
    batch_size: int = 16
    pe_train: float = 0.0
    channel: ChannelConfig = field(default_factory=lambda: ChannelConfig(BBEC, 0.0, 1, 0))
    channel_enabled: bool = True
    interleaver: str = STRIDE
    pe_jitter: bool = False
    rgan_steps: int = 2
    disc_scales: int = 3
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    direct: bool = False  # code x itself instead of the residual (ablation)

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ConfigError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.flat_epochs < 0 or self.decay_epochs < 0 or self.epochs < 1:
            raise ConfigError(f"need epochs >= 1, got flat={self.flat_epochs} decay={self.decay_epochs}")
        if not 0.0 <= self.pe_train <= 100.0:
            raise ConfigError(f"pe_train must be in [0, 100], got {self.pe_train}")
        if self.rgan_steps < 1 or self.disc_scales < 1:
            raise ConfigError("rgan_steps and disc_scales must be >= 1")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")

    @property
    def epochs(self) -> int:
        return self.flat_epochs + self.decay_epochs


def learning_rate(cfg: TrainConfig, epoch: int) -> float:
    """Constant for ``flat_epochs``, then linear decay that stays above zero."""
    if epoch < cfg.flat_epochs:
        return cfg.learning_rate
    done = epoch - cfg.flat_epochs
    return cfg.learning_rate * (1.0 - done / (cfg.decay_epochs + 1))


class Adam:
    def __init__(self, params: list[Tensor], betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)


def project_gdn(params: ModelParams) -> None:
    """Keep GDN parameters in their domain: beta >= BETA_MIN, gamma >= 0."""
    for name, t in params.tensors.items():
        if name.endswith(".beta"):
            np.maximum(t.data, BETA_MIN, out=t.data)
        elif name.endswith(".gamma"):
            np.maximum(t.data, 0.0, out=t.data)


def _batches(n: int, size: int, seed: int, epoch: int):
    order = rng_for(seed, "order", epoch).permutation(n)
    return [order[lo:lo + size] for lo in range(0, n, size)]


def _check_finite(value: float, what: str, last_good: ModelParams, epoch: int) -> None:
    if not math.isfinite(value):
        raise TrainingDivergedError(f"non-finite {what} in epoch {epoch}", last_good, epoch)


class _EpochLog:
    def __init__(self):
        self.sums: dict[str, float] = {}
        self.count = 0

    def add(self, **values: float) -> None:
        for k, v in values.items():
            self.sums[k] = self.sums.get(k, 0.0) + float(v)
        self.count += 1

    def row(self, epoch: int, lr: float) -> dict:
        return {"epoch": epoch, "lr": lr, **{k: v / self.count for k, v in self.sums.items()}}


# -- base layer ----------------------------------------------------------------


def train_base(dataset: Dataset, cfg: TrainConfig, base_cfg: BaseConfig = BaseConfig(),
               log: LogFn | None = None) -> ModelParams:
    """Train CompNet + FineNet steps against the multi-scale discriminators."""
    if cfg.stage != BASE_STAGE:
        raise ConfigError(f"train_base needs stage={BASE_STAGE!r}, got {cfg.stage!r}")
    base_cfg = replace(base_cfg, steps=cfg.rgan_steps, scales=cfg.disc_scales,
                       semantic=base_cfg.semantic and dataset.labels is not None)
    params = init_base(base_cfg, dataset.images.shape[1:], derive_seed(cfg.seed, "init", "base"))
    gen = [t for k, t in params.tensors.items() if not k.startswith("disc")]
    disc = params.parameters("disc")
    opt_g, opt_d = Adam(gen, betas=(0.5, 0.999)), Adam(disc, betas=(0.5, 0.999))
    last_good = params.clone()

    for epoch in range(cfg.epochs):
        lr = learning_rate(cfg, epoch)
        acc = _EpochLog()
        for idx in _batches(len(dataset), cfg.batch_size, cfg.seed, epoch):
            x = Tensor(dataset.images[idx])
            s = Tensor(dataset.labels[idx]) if base_cfg.semantic else None
            c_prime, refined = base_forward(params, x, s, ste=True)
            losses = rgan_losses(params, s, c_prime, x, refined, cfg.weights)
            values = {k: v.item() for k, v in losses.items()}
            _check_finite(values["L_RGAN"], "L_RGAN", last_good, epoch)

            params.zero_grad()
            backward(losses["L_G"])
            opt_g.step(lr)

            # discriminator update on the (pre-update) fakes, generator detached
            params.zero_grad()
            fakes = [r.detach() for r in refined]
            d_loss = rgan_losses(params, s, c_prime.detach(), x, fakes, cfg.weights)["L_D"]
            backward(d_loss)
            opt_d.step(lr)
            params.zero_grad()
            project_gdn(params)
            acc.add(**values)
        row = acc.row(epoch, lr)
        if log:
            log(row)
        last_good = params.clone()

    return with_meta(params, pe_train=0.0, epochs=cfg.epochs, stage=BASE_STAGE,
                     train_seed=int(cfg.seed), train_size=len(dataset))


# -- residual codec --------------------------------------------------------------


def channel_ste(bits: Tensor, cfg: TrainConfig, pe: float, labels: tuple) -> Tensor:
    """Interleave -> block channel -> deinterleave per image, gradient straight through."""
    if not cfg.channel_enabled or pe <= 0:
        return bits
    out = np.empty_like(bits.data)
    per_image = bits.shape[1:]
    spec = InterleaverSpec.for_channel(int(np.prod(per_image)), cfg.channel, cfg.interleaver,
                                       seed=derive_seed(cfg.seed, "interleaver"))
    for n in range(bits.shape[0]):
        ch = replace(cfg.channel, pe=pe, seed=derive_seed(cfg.seed, "channel", *labels, n))
        out[n], _ = transmit_bits(bits.data[n], spec, ch)
    return ops.straight_through(bits, out)


def _batch_pe(cfg: TrainConfig, epoch: int, batch: int) -> float:
    if not cfg.pe_jitter:
        return cfg.pe_train
    return float(min(100.0, rng_for(cfg.seed, "jitter", epoch, batch).uniform(0.0, 2.0 * cfg.pe_train)))


def residual_losses(enh: ModelParams, x: Tensor, x_prime: Tensor, cfg: TrainConfig,
                    rng: np.random.Generator, pe: float, labels: tuple) -> dict[str, Tensor]:
    """L_BResNet = L_d(r, r_hat) and L_SumNet = L_d(x, x_hat) for one batch."""
    r = x - x_prime
    latent = bresnet_encode(enh, r)
    bits = channel_ste(binarize_ste(latent, rng=rng), cfg, pe, labels)
    r_hat = bresnet_decode(enh, bits)
    x_hat = sumnet(enh, x_prime, r_hat)
    l_b = loss_distance(r, r_hat, cfg.weights)
    l_s = loss_distance(x, x_hat, cfg.weights)
    return {"L_BResNet": l_b, "L_SumNet": l_s, "loss": l_b + l_s}


def _residual_meta(cfg: TrainConfig, dataset: Dataset, base: ModelParams | None) -> dict:
    return {"pe_train": float(cfg.pe_train), "epochs": cfg.epochs, "stage": cfg.stage,
            "direct": bool(cfg.direct), "train_seed": int(cfg.seed), "train_size": len(dataset),
            "interleaver": cfg.interleaver, "block_bytes": int(cfg.channel.block_bytes),
            "channel_model": cfg.channel.model,
            "base_digest": base.digest().hex() if base is not None else ""}


def _check_shapes(dataset: Dataset, base: ModelParams | None, codec: CodecConfig) -> None:
    shape = dataset.images.shape[1:]
    if base is not None and tuple(base.meta["input_shape"])[0] != shape[0]:
        raise ConfigError(f"base model expects {base.meta['input_shape'][0]} channels, data has {shape[0]}")
    if codec.image_channels != shape[0]:
        raise ConfigError(f"codec expects {codec.image_channels} channels, data has {shape[0]}")
    if shape[1] % 8 or shape[2] % 8:
        raise ConfigError(f"crop {shape[1:]} incompatible with the x8 latent downsampling")


def train_residual(dataset: Dataset, base: ModelParams | None, cfg: TrainConfig,
                   codec: CodecConfig = CodecConfig(), log: LogFn | None = None) -> ModelParams:
    """Train encoder, decoder and SumNet with the base layer frozen.

    With ``cfg.direct`` the codec sees the original image (x' = 0) and no
    base model is needed.
    """
    if cfg.stage != RESIDUAL_STAGE:
        raise ConfigError(f"train_residual needs stage={RESIDUAL_STAGE!r}, got {cfg.stage!r}")
    if base is None and not cfg.direct:
        raise ConfigError("residual training needs a base model")
    _check_shapes(dataset, base, codec)
    if cfg.direct:
        x_prime_all = np.zeros_like(dataset.images)
    else:
        x_prime_all, _ = synthesize_images(base.frozen(), dataset.images, dataset.labels)

    enh = init_enhancement(codec, dataset.images.shape[1:], derive_seed(cfg.seed, "init", "enhancement"))
    opt = Adam(enh.parameters())
    last_good = enh.clone()
    for epoch in range(cfg.epochs):
        lr = learning_rate(cfg, epoch)
        acc = _EpochLog()
        for b, idx in enumerate(_batches(len(dataset), cfg.batch_size, cfg.seed, epoch)):
            x, xp = Tensor(dataset.images[idx]), Tensor(x_prime_all[idx])
            rng = rng_for(cfg.seed, "binarize", epoch, b)
            losses = residual_losses(enh, x, xp, cfg, rng, _batch_pe(cfg, epoch, b), (epoch, b))
            values = {k: v.item() for k, v in losses.items()}
            _check_finite(values["loss"], "residual loss", last_good, epoch)
            enh.zero_grad()
            backward(losses["loss"])
            opt.step(lr)
            enh.zero_grad()
            project_gdn(enh)
            acc.add(**values)
        if log:
            log(acc.row(epoch, lr))
        last_good = enh.clone()
    enh.meta.update(_residual_meta(cfg, dataset, base))
    return enh


def retrain_lowdata(dataset: Dataset, base: ModelParams, cfg: TrainConfig, subset_size: int | None = None,
                    codec: CodecConfig = CodecConfig(), log: LogFn | None = None) -> ModelParams:
    """Residual training on the first-``subset_size`` seeded subset (``None`` = all)."""
    if subset_size is not None:
        if subset_size < 1:
            raise ConfigError(f"subset size must be >= 1, got {subset_size}")
        dataset = dataset.subset(subset_size, derive_seed(cfg.seed, "lowdata"))
    enh = train_residual(dataset, base, cfg, codec, log)
    enh.meta["subset_size"] = len(dataset)
    return enh


# -- joint (experimental) -------------------------------------------------------------


def train_joint(dataset: Dataset, cfg: TrainConfig, base_cfg: BaseConfig = BaseConfig(),
                codec: CodecConfig = CodecConfig(), log: LogFn | None = None) -> tuple[ModelParams, ModelParams]:
    """All three blocks at once: generator side minimizes L_G + L_BResNet + L_SumNet.

    Known to be less stable than the two-stage procedure; kept for comparison.
    """
    if cfg.stage != JOINT_STAGE:
        raise ConfigError(f"train_joint needs stage={JOINT_STAGE!r}, got {cfg.stage!r}")
    _check_shapes(dataset, None, codec)
    base_cfg = replace(base_cfg, steps=cfg.rgan_steps, scales=cfg.disc_scales, semantic=False)
    base = init_base(base_cfg, dataset.images.shape[1:], derive_seed(cfg.seed, "init", "base"))
    enh = init_enhancement(codec, dataset.images.shape[1:], derive_seed(cfg.seed, "init", "enhancement"))
    gen = [t for k, t in base.tensors.items() if not k.startswith("disc")] + enh.parameters()
    opt_g, opt_d = Adam(gen, betas=(0.5, 0.999)), Adam(base.parameters("disc"), betas=(0.5, 0.999))
    last_good = enh.clone()
    for epoch in range(cfg.epochs):
        lr = learning_rate(cfg, epoch)
        acc = _EpochLog()
        for b, idx in enumerate(_batches(len(dataset), cfg.batch_size, cfg.seed, epoch)):
            x = Tensor(dataset.images[idx])
            c_prime, refined = base_forward(base, x, None, ste=True)
            rg = rgan_losses(base, None, c_prime, x, refined, cfg.weights)
            res = residual_losses(enh, x, refined[-1], cfg, rng_for(cfg.seed, "binarize", epoch, b),
                                  _batch_pe(cfg, epoch, b), (epoch, b))
            total = rg["L_G"] + res["loss"]
            values = {"L_G": rg["L_G"].item(), "L_D": rg["L_D"].item(), "L_BResNet": res["L_BResNet"].item(),
                      "L_SumNet": res["L_SumNet"].item()}
            _check_finite(total.item(), "joint loss", last_good, epoch)
            base.zero_grad()
            enh.zero_grad()
            backward(total)
            opt_g.step(lr)
            base.zero_grad()
            d_loss = rgan_losses(base, None, c_prime.detach(), x, [r.detach() for r in refined], cfg.weights)["L_D"]
            backward(d_loss)
            opt_d.step(lr)
            base.zero_grad()
            enh.zero_grad()
            project_gdn(enh)
            acc.add(**values)
        if log:
            log(acc.row(epoch, lr))
        last_good = enh.clone()
    base = with_meta(base, epochs=cfg.epochs, stage=JOINT_STAGE, train_seed=int(cfg.seed))
    enh.meta.update(_residual_meta(cfg, dataset, base))
    return base, enh
