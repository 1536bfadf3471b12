"""Training objectives.

``loss_distance`` is the three-term image distance (L1 + (1 - SSIM) +
feature distance). The feature term compares activations of a fixed,
seed-generated random convolution bank, standing in for a pretrained
perceptual network.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from ..autodiff import Tensor, ops
from ..metrics import gaussian_window
from ..nn import ModelParams, discnet_scores

LOG_EPS = 1e-7
FEATURE_SEED = 20240917


@dataclass(frozen=True)
class LossWeights:
    l1: float = 1.0
    ssim: float = 1.0
    feat: float = 1.0
    adv: float = 1.0


@lru_cache(maxsize=8)
def _window(size: int, sigma: float, dtype) -> np.ndarray:
    g = gaussian_window(size, sigma)
    return np.outer(g, g).astype(dtype)[None, None]


def _blur(x: Tensor, win: Tensor) -> Tensor:
    n, c, h, w = x.shape
    flat = ops.reshape(x, (n * c, 1, h, w))
    out = ops.conv2d(flat, win)
    return ops.reshape(out, (n, c) + out.shape[-2:])


def ssim_value(x: Tensor, y: Tensor, data_range: float = 2.0, window: int = 11, sigma: float = 1.5) -> Tensor:
    """Differentiable mean SSIM over valid windows for batches in [-1, 1]."""
    if x.ndim == 3:
        x, y = ops.reshape(x, (1,) + x.shape), ops.reshape(y, (1,) + y.shape)
    if min(x.shape[-2:]) < window:
        raise ValueError(f"SSIM loss needs spatial dims >= {window}, got {x.shape[-2:]}")
    win = Tensor(_window(window, sigma, x.dtype))
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mx, my = _blur(x, win), _blur(y, win)
    mxx, myy, mxy = mx * mx, my * my, mx * my
    sxx = _blur(x * x, win) - mxx
    syy = _blur(y * y, win) - myy
    sxy = _blur(x * y, win) - mxy
    num = (2.0 * mxy + c1) * (2.0 * sxy + c2)
    den = (mxx + myy + c1) * (sxx + syy + c2)
    return ops.mean(num / den)


class FeatureBank:
    """Three fixed random conv layers; never trained."""

    def __init__(self, channels: int = 3, seed: int = FEATURE_SEED, dtype=np.float32):
        rng = np.random.default_rng(seed)
        self.layers = []
        for cin, cout, stride in ((channels, 8, 1), (8, 16, 2), (16, 16, 2)):
            bound = math.sqrt(3.0 / (cin * 9))
            w = rng.uniform(-bound, bound, size=(cout, cin, 3, 3)).astype(dtype)
            self.layers.append((Tensor(w), stride))

    def features(self, x: Tensor) -> list[Tensor]:
        feats = []
        for i, (w, stride) in enumerate(self.layers):
            if w.dtype != x.dtype:
                w = Tensor(w.data.astype(x.dtype))
            x = ops.conv2d(x, w, None, stride, 1)
            if i < len(self.layers) - 1:
                x = ops.leaky_relu(x)
            feats.append(x)
        return feats


@lru_cache(maxsize=4)
def feature_bank(channels: int = 3) -> FeatureBank:
    return FeatureBank(channels)


def feature_distance(x: Tensor, y: Tensor) -> Tensor:
    bank = feature_bank(x.shape[-3])
    total = None
    for fx, fy in zip(bank.features(x), bank.features(y)):
        d = fx - fy
        term = ops.mean(d * d)
        total = term if total is None else total + term
    return total


def loss_distance(x: Tensor, y: Tensor, weights: LossWeights = LossWeights()) -> Tensor:
    """w_l1 * mean|x - y| + w_ssim * (1 - SSIM) + w_feat * feature distance."""
    if x.shape != y.shape:
        raise ValueError(f"loss_distance: shapes {x.shape} and {y.shape} differ")
    diff = x - y
    total = weights.l1 * ops.mean(ops.absolute(diff))
    if weights.ssim:
        total = total + weights.ssim * (1.0 - ssim_value(x, y))
    if weights.feat:
        total = total + weights.feat * feature_distance(x, y)
    return total


def _log_guarded(p: Tensor) -> Tensor:
    if not np.all(np.isfinite(p.data)):
        raise FloatingPointError("discriminator score is not finite")
    return ops.log(ops.clamp(p, LOG_EPS, 1.0 - LOG_EPS))


def _neg_log_sum(scores: Sequence[Tensor], complement: bool = False) -> Tensor:
    total = None
    for p in scores:
        term = _log_guarded(1.0 - p if complement else p)
        term = -ops.mean(term)
        total = term if total is None else total + term
    return total


def adversarial_terms(disc: ModelParams, s, c_prime: Tensor, x: Tensor, refined: Sequence[Tensor]):
    """(generator term, real term, fake term) of the recursive GAN objective.

    Every refinement step j has its own multi-scale discriminator; the real
    image is scored by each of them.
    """
    gen = real = fake = None
    for j, xj in enumerate(refined):
        fake_scores = discnet_scores(disc, j, s, c_prime, xj)
        real_scores = discnet_scores(disc, j, s, c_prime, x)
        g = _neg_log_sum(fake_scores)
        r = _neg_log_sum(real_scores)
        f = _neg_log_sum(fake_scores, complement=True)
        gen = g if gen is None else gen + g
        real = r if real is None else real + r
        fake = f if fake is None else fake + f
    return gen, real, fake


def rgan_losses(disc: ModelParams, s, c_prime: Tensor, x: Tensor, refined: Sequence[Tensor],
                weights: LossWeights = LossWeights()) -> dict[str, Tensor]:
    """L_G, L_D and L_RGAN = L_G + L_D.

    L_G = -sum_j sum_i log D_ji(s, c', x'_j) + sum_j L_d(x, x'_j)
    L_D = -sum_j sum_i log D_ji(s, c', x) - sum_j sum_i log(1 - D_ji(s, c', x'_j))
    """
    gen, real, fake = adversarial_terms(disc, s, c_prime, x, refined)
    dist = None
    for xj in refined:
        d = loss_distance(x, xj, weights)
        dist = d if dist is None else dist + d
    l_g = weights.adv * gen + dist
    l_d = real + fake
    return {"L_G": l_g, "L_D": l_d, "L_RGAN": l_g + l_d, "adv": gen, "distance": dist}
