"""Latent binarization and bit-rate accounting."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import Tensor, ops

STOCHASTIC = "stochastic"
DETERMINISTIC = "deterministic"


@dataclass
class LatentBits:
    """Binarized latent in the tensor domain: every element is -1.0 or +1.0."""

    values: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if not np.all(np.abs(self.values) == 1.0):
            raise ValueError("LatentBits values must be exactly -1.0 or +1.0")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def __eq__(self, other) -> bool:
        return isinstance(other, LatentBits) and np.array_equal(self.values, other.values)


def _bits_from(values: np.ndarray, mode: str, rng: np.random.Generator | None) -> np.ndarray:
    if mode == DETERMINISTIC:
        return np.where(values >= 0, 1.0, -1.0).astype(np.float32)
    if mode == STOCHASTIC:
        if rng is None:
            raise ValueError("stochastic binarization needs a seed or generator")
        u = rng.random(values.shape)
        return np.where(u < (1.0 + values) / 2.0, 1.0, -1.0).astype(np.float32)
    raise ValueError(f"unknown binarizer mode {mode!r}")


def _clamped(values: np.ndarray) -> np.ndarray:
    if values.size and (values.min() < -1.0 or values.max() > 1.0):
        warnings.warn("binarizer input outside [-1, 1]; clamping", RuntimeWarning, stacklevel=3)
        return np.clip(values, -1.0, 1.0)
    return values


def binarize(latent, mode: str = DETERMINISTIC, seed: int | None = None,
             rng: np.random.Generator | None = None) -> LatentBits:
    """Map a latent in [-1, 1] to +-1.

    Stochastic mode emits +1 with probability ``(1 + v) / 2`` so the expected
    bit equals ``v``; deterministic mode takes the sign with ``sign(0) = +1``.
    """
    values = _clamped(np.asarray(latent.data if isinstance(latent, Tensor) else latent, dtype=np.float64))
    if rng is None and seed is not None:
        rng = np.random.default_rng(seed)
    bits = _bits_from(values, mode, rng)
    return LatentBits(bits, {"mode": mode, "seed": seed})


def binarize_ste(latent: Tensor, mode: str = STOCHASTIC, rng: np.random.Generator | None = None) -> Tensor:
    """Binarize inside a training graph; the gradient passes straight through."""
    values = _clamped(latent.data.astype(np.float64))
    return ops.straight_through(latent, _bits_from(values, mode, rng))


@dataclass(frozen=True)
class BppLedger:
    bpp_r: float
    bpp_c: float
    bpp_s: float
    bpp_total: float


def bpp(latent_shape: Sequence[int], image_shape: Sequence[int],
        extras: dict | None = None) -> BppLedger:
    """Bits per source pixel of the residual latent plus base-layer payloads.

    ``image_shape`` is ``(H, W)``; ``extras`` may carry ``c_bits`` and
    ``s_bits`` for the coarse image and semantic map payloads.
    """
    h, w = image_shape[-2:]
    area = int(h) * int(w)
    if area <= 0:
        raise ValueError(f"image area must be positive, got {tuple(image_shape)}")
    if any(int(d) <= 0 for d in latent_shape):
        raise ValueError(f"latent dims must be positive, got {tuple(latent_shape)}")
    r_bits = math.prod(int(d) for d in latent_shape)
    extras = extras or {}
    c_bits = int(extras.get("c_bits", 0))
    s_bits = int(extras.get("s_bits", 0))
    return BppLedger(r_bits / area, c_bits / area, s_bits / area, (r_bits + c_bits + s_bits) / area)


def pack_bits(bits: LatentBits | np.ndarray) -> bytes:
    """-1 -> 0, +1 -> 1, MSB first; the last byte is zero padded."""
    values = bits.values if isinstance(bits, LatentBits) else np.asarray(bits)
    return np.packbits((values.reshape(-1) > 0).astype(np.uint8), bitorder="big").tobytes()


def unpack_bits(data: bytes, shape: Sequence[int]) -> LatentBits:
    n = math.prod(shape)
    if len(data) != (n + 7) // 8:
        raise ValueError(f"{len(data)} bytes cannot hold shape {tuple(shape)} ({n} bits -> {(n + 7) // 8} bytes)")
    raw = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="big")[:n]
    return LatentBits(np.where(raw == 1, 1.0, -1.0).reshape(shape))
