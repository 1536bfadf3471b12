"""Desk-scale experiment protocol shared by the scripts and the acceptance suite.

One :class:`DeskProtocol` fixes every hyperparameter of the small CPU runs:
a base layer per seed, residual codecs trained with and without channel
errors, a direct-coding codec for the ablation and low-data retraining.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ..link import ChannelConfig
from ..nn import BaseConfig, CodecConfig, ModelParams
from .data import Dataset, load_dataset
from .evaluation import evaluate
from .losses import LossWeights
from .train import BASE_STAGE, RESIDUAL_STAGE, TrainConfig, retrain_lowdata, train_base, train_residual

CLEAN = "clean"  # residual codec trained at pe_train = 0
ROBUST = "robust"  # residual codec trained at the protocol's pe_train
DIRECT = "direct"  # same codec on x itself, no base layer


@dataclass(frozen=True)
class DeskProtocol:
    crop: int = 32
    test_count: int = 50
    data_seed: int = 0
    base_epochs: tuple[int, int] = (10, 10)  # (flat, decay)
    codec_epochs: tuple[int, int] = (20, 20)
    batch_size: int = 16
    factor: int = 8
    latent_channels: int = 32
    weights: LossWeights = field(default_factory=lambda: LossWeights(adv=0.01))
    pe_train: float = 8.0
    pe_test: tuple[float, ...] = (0.0, 16.0)
    block_bytes: int = 1

    def base_config(self) -> BaseConfig:
        return BaseConfig(factor=self.factor)

    def codec_config(self) -> CodecConfig:
        return CodecConfig(latent_channels=self.latent_channels)

    def channel(self, pe: float = 0.0) -> ChannelConfig:
        return ChannelConfig(pe=pe, block_bytes=self.block_bytes)

    def train_config(self, seed: int, stage: str = RESIDUAL_STAGE, pe_train: float = 0.0,
                     direct: bool = False) -> TrainConfig:
        flat, decay = self.base_epochs if stage == BASE_STAGE else self.codec_epochs
        return TrainConfig(stage=stage, flat_epochs=flat, decay_epochs=decay, batch_size=self.batch_size,
                           pe_train=pe_train, channel=self.channel(), weights=self.weights, seed=seed,
                           direct=direct)

    def datasets(self, directory) -> tuple[Dataset, Dataset]:
        return (load_dataset(directory, self.crop, self.data_seed, "train", self.test_count),
                load_dataset(directory, self.crop, self.data_seed, "test", self.test_count))


LogFn = Callable[[str], None]


def train_suite(train: Dataset, protocol: DeskProtocol, seed: int,
                kinds: Sequence[str] = (CLEAN, ROBUST, DIRECT), log: LogFn | None = None) -> dict[str, ModelParams]:
    """Base layer plus the requested codecs for one seed; keys are ``"base"`` and ``kinds``."""
    say = log or (lambda _msg: None)
    models: dict[str, ModelParams] = {}
    if set(kinds) - {DIRECT}:
        models["base"] = train_base(train, protocol.train_config(seed, BASE_STAGE), protocol.base_config())
        say(f"seed {seed}: base trained")
    settings = {CLEAN: dict(pe_train=0.0), ROBUST: dict(pe_train=protocol.pe_train),
                DIRECT: dict(pe_train=protocol.pe_train, direct=True)}
    for kind in kinds:
        cfg = protocol.train_config(seed, **settings[kind])
        base = None if cfg.direct else models["base"]
        models[kind] = train_residual(train, base, cfg, protocol.codec_config())
        say(f"seed {seed}: {kind} codec trained")
    return models


def lowdata_suite(train: Dataset, base: ModelParams, protocol: DeskProtocol, seed: int,
                  sizes: Sequence[int | None], log: LogFn | None = None) -> dict[int | None, ModelParams]:
    """Robust codec retrained on nested seeded subsets (``None`` = the whole split)."""
    out = {}
    for size in sizes:
        cfg = protocol.train_config(seed, pe_train=protocol.pe_train)
        out[size] = retrain_lowdata(train, base, cfg, size, protocol.codec_config())
        if log:
            log(f"seed {seed}: retrained on {out[size].meta['subset_size']} crops")
    return out


@dataclass
class CellScores:
    """Per-image PSNR values for one (model, pe_test) evaluation."""

    psnr: np.ndarray  # PSNR(x, x_hat)
    naive: np.ndarray  # PSNR(x, clamp(x' + r_hat))
    base: np.ndarray  # PSNR(x, x')

    @property
    def mean(self) -> float:
        return float(np.mean(self.psnr))

    @property
    def median(self) -> float:
        return float(np.median(self.psnr))


def score(test: Dataset, base: ModelParams | None, enh: ModelParams, protocol: DeskProtocol, pe: float,
          seed: int = 0, jobs: int = 1) -> CellScores:
    results = evaluate(test, base, enh, protocol.channel(pe), seed, jobs)
    recs = [r.record for r in results]
    return CellScores(np.array([r.psnr_db for r in recs]), np.array([r.extra["psnr_naive_db"] for r in recs]),
                      np.array([r.psnr_base_db for r in recs]))


def robustness_gap(scores: dict[float, CellScores]) -> float:
    """Mean PSNR at the cleanest pe_test minus mean PSNR at the noisiest."""
    lo, hi = min(scores), max(scores)
    return scores[lo].mean - scores[hi].mean
