"""Image quality metrics and latent-structure statistics.

Metric functions take 8-bit images directly; float inputs are treated as
[-1, 1] tensors and de-normalized first. Colour images are ``(C, H, W)``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .binarizer import BppLedger

PSNR_CAP = 100.0
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


def to_uint8(v) -> np.ndarray:
    """[-1, 1] tensor values -> bytes via round((v + 1) / 2 * 255), clamped."""
    v = np.asarray(v, dtype=np.float64)
    return np.clip(np.round((v + 1.0) / 2.0 * 255.0), 0, 255).astype(np.uint8)


def from_uint8(b) -> np.ndarray:
    return (np.asarray(b, dtype=np.float32) / 255.0) * 2.0 - 1.0


def _as_bytes(img) -> np.ndarray:
    img = np.asarray(img)
    if img.dtype == np.uint8:
        return img
    return to_uint8(img)


def _check_pair(a, b):
    a, b = _as_bytes(a), _as_bytes(b)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a.astype(np.float64), b.astype(np.float64)


def mse(a, b) -> float:
    a, b = _check_pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr_from_mse(m: float) -> float:
    if m == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(255.0 ** 2 / m))


def psnr(a, b) -> float:
    """PSNR in dB on 8-bit values; identical images give the 100 dB cap."""
    return psnr_from_mse(mse(a, b))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def _blur(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = g.size
    t = sliding_window_view(img, k, axis=-1) @ g
    return sliding_window_view(t, k, axis=-2) @ g


def _ssim_parts(a: np.ndarray, b: np.ndarray, win: int, sigma: float, k1: float, k2: float, data_range: float):
    g = gaussian_window(win, sigma)
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    mu_a, mu_b = _blur(a, g), _blur(b, g)
    saa = _blur(a * a, g) - mu_a ** 2
    sbb = _blur(b * b, g) - mu_b ** 2
    sab = _blur(a * b, g) - mu_a * mu_b
    cs = (2 * sab + c2) / (saa + sbb + c2)
    lum = (2 * mu_a * mu_b + c1) / (mu_a ** 2 + mu_b ** 2 + c1)
    return lum * cs, cs


def _channels(a: np.ndarray) -> np.ndarray:
    return a[None] if a.ndim == 2 else a


def ssim(a, b, window: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean SSIM over valid windows, averaged over channels."""
    a, b = _check_pair(a, b)
    a, b = _channels(a), _channels(b)
    if min(a.shape[-2:]) < window:
        raise ValueError(f"ssim needs spatial dims >= {window}, got {a.shape[-2:]}")
    s, _ = _ssim_parts(a, b, window, sigma, k1, k2, 255.0)
    return float(np.clip(s.mean(axis=(-2, -1)), 0.0, 1.0).mean()) if not np.array_equal(a, b) else 1.0


def _pool2(a: np.ndarray) -> np.ndarray:
    h, w = a.shape[-2] // 2 * 2, a.shape[-1] // 2 * 2
    a = a[..., :h, :w]
    return a.reshape(a.shape[:-2] + (h // 2, 2, w // 2, 2)).mean(axis=(-3, -1))


def ms_ssim_scales(shape, window: int = 11, scales: int = 5) -> int:
    m = min(shape[-2:])
    n = 1
    while n < scales and m // (2 ** n) >= window:
        n += 1
    return n


def ms_ssim(a, b, scales: int = 5, weights=MS_SSIM_WEIGHTS, strict: bool = False,
            window: int = 11, sigma: float = 1.5) -> float:
    """Multi-scale SSIM with the standard five weights.

    When the image is too small for every scale, the coarsest scales are
    dropped and the remaining weights renormalized (an error when ``strict``).
    """
    a, b = _check_pair(a, b)
    a, b = _channels(a), _channels(b)
    if min(a.shape[-2:]) < window:
        raise ValueError(f"ms_ssim needs spatial dims >= {window}, got {a.shape[-2:]}")
    usable = ms_ssim_scales(a.shape, window, scales)
    if usable < scales:
        if strict:
            raise ValueError(f"image {a.shape[-2:]} too small for {scales} MS-SSIM scales")
        warnings.warn(f"ms_ssim: using {usable} of {scales} scales for image {a.shape[-2:]}",
                      RuntimeWarning, stacklevel=2)
    if np.array_equal(a, b):
        return 1.0
    w = np.asarray(weights[:usable], dtype=np.float64)
    w = w / w.sum()
    total = 1.0
    for i in range(usable):
        s, cs = _ssim_parts(a, b, window, sigma, 0.01, 0.03, 255.0)
        term = s if i == usable - 1 else cs
        val = max(float(term.mean(axis=(-2, -1)).mean()), 0.0)
        total *= val ** w[i]
        a, b = _pool2(a), _pool2(b)
    return float(min(total, 1.0))


def to_db(v: float) -> float:
    """-10 log10(1 - v), the dB form of an MS-SSIM score."""
    if v >= 1.0:
        raise ValueError(f"to_db needs v < 1, got {v}")
    return -10.0 * math.log10(1.0 - v)


# -- latent structure --------------------------------------------------------


@dataclass
class LatentStats:
    ones_density_pre: float
    ones_density_post: float
    local_density_correlation: float
    mean_run_length_zero: float
    correlation_defined: bool = True
    mean_run_length_zero_post: float = 0.0


def latent_mosaic(pixels: np.ndarray) -> np.ndarray:
    """Lay a (C, H, W) latent out as one (H, C*W) image, channels side by side."""
    pixels = np.asarray(pixels)
    if pixels.ndim == 2:
        return pixels
    if pixels.ndim == 3:
        return np.concatenate(list(pixels), axis=1)
    return pixels.reshape(1, -1)


def _tile_density(ones: np.ndarray, tile: int) -> np.ndarray:
    h, w = ones.shape
    th, tw = math.ceil(h / tile), math.ceil(w / tile)
    pad = np.full((th * tile, tw * tile), np.nan)
    pad[:h, :w] = ones
    return np.nanmean(pad.reshape(th, tile, tw, tile), axis=(1, 3)).reshape(-1)


def _zero_runs(ones: np.ndarray) -> float:
    z = np.concatenate([[0], (ones.reshape(-1) == 0).astype(np.int8), [0]])
    edges = np.diff(z)
    starts, ends = np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)
    return float((ends - starts).mean()) if starts.size else 0.0


def latent_stats(pre: np.ndarray, post: np.ndarray, tile: int = 8) -> LatentStats:
    """Density and structure statistics of an image-domain latent before/after the channel."""
    pre, post = np.asarray(pre), np.asarray(post)
    if pre.shape != post.shape:
        raise ValueError(f"shapes differ: {pre.shape} vs {post.shape}")
    for arr in (pre, post):
        if np.any((arr != 0) & (arr != 255)):
            raise ValueError("latent images must contain only 0 and 255")
    a = (latent_mosaic(pre) == 255).astype(np.float64)
    b = (latent_mosaic(post) == 255).astype(np.float64)
    da, db = _tile_density(a, tile), _tile_density(b, tile)
    defined = da.size > 1 and da.std() > 0 and db.std() > 0
    corr = float(np.clip(np.corrcoef(da, db)[0, 1], -1.0, 1.0)) if defined else 0.0
    return LatentStats(
        ones_density_pre=float(a.mean()),
        ones_density_post=float(b.mean()),
        local_density_correlation=corr,
        mean_run_length_zero=_zero_runs(a),
        correlation_defined=bool(defined),
        mean_run_length_zero_post=_zero_runs(b),
    )


@dataclass
class MetricsRecord:
    psnr_db: float
    ssim: float
    ms_ssim: float
    ms_ssim_db: float
    bpp: BppLedger
    latent_stats: LatentStats
    image_id: str = ""
    dataset: str = ""
    pe_train: float = 0.0
    pe_test: float = 0.0
    seed: int = 0
    psnr_base_db: float = 0.0
    blocks_hit: int = 0
    ones_flipped: int = 0
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return asdict(self)
