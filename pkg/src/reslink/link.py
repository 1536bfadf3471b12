"""Transmission chain: domain transitions, interleaving, block channel, framing.

The channel sees the interleaved latent as an image-domain byte stream with
one pixel per bit (0 for -1, 255 for +1). Blocks are ``8 * block_bytes``
consecutive pixels, i.e. ``block_bytes`` bytes of the packed-bit view.
"""
from __future__ import annotations

import math
import struct
import warnings
import zlib
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .binarizer import LatentBits, pack_bits, unpack_bits

BBEC = "BBEC"
BBSC = "BBSC"
STRIDE = "stride"
PERMUTATION = "permutation"
_SCHEME_IDS = {STRIDE: 0, PERMUTATION: 1}


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class ChannelConfig:
    model: str = BBEC
    pe: float = 0.0
    block_bytes: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.model not in (BBEC, BBSC):
            raise ValueError(f"unknown channel model {self.model!r}")
        if not 0.0 <= float(self.pe) <= 100.0:
            raise ValueError(f"pe must be a percentage in [0, 100], got {self.pe}")
        if int(self.block_bytes) < 1:
            raise ValueError(f"block_bytes must be >= 1, got {self.block_bytes}")

    def with_seed(self, seed: int) -> "ChannelConfig":
        return ChannelConfig(self.model, self.pe, self.block_bytes, int(seed))


@dataclass(frozen=True)
class ErrorReport:
    blocks_hit: int = 0
    ones_flipped: int = 0
    zeros_flipped: int = 0
    ones_before: int = 0


# -- domains -----------------------------------------------------------------


def to_image_domain(bits) -> np.ndarray:
    """Tensor domain {-1, +1} -> image domain {0, 255} (uint8, same shape)."""
    values = bits.values if isinstance(bits, LatentBits) else np.asarray(bits)
    if not np.all(np.abs(values) == 1):
        raise DomainError("tensor-domain bits must be -1 or +1")
    return np.where(values > 0, 255, 0).astype(np.uint8)


def to_tensor_domain(pixels: np.ndarray) -> LatentBits:
    pixels = np.asarray(pixels)
    bad = (pixels != 0) & (pixels != 255)
    if np.any(bad):
        raise DomainError(f"image-domain bytes must be 0 or 255, found {int(pixels[bad].reshape(-1)[0])}")
    return LatentBits(np.where(pixels == 255, 1.0, -1.0))


# -- interleaver -------------------------------------------------------------


@dataclass(frozen=True)
class InterleaverSpec:
    """Bijective reordering of ``total_bits`` positions.

    ``stride`` writes row-wise into ``param`` columns and reads column-wise;
    ``permutation`` draws a uniform random bijection from seed ``param``.
    """

    scheme: str
    param: int
    total_bits: int
    _cache: dict = field(default_factory=dict, compare=False, repr=False, hash=False)

    def __post_init__(self):
        if self.scheme not in _SCHEME_IDS:
            raise ValueError(f"unknown interleaver scheme {self.scheme!r}")
        if self.scheme == STRIDE and self.param < 1:
            raise ValueError("stride depth must be >= 1")
        if self.total_bits < 0:
            raise ValueError("total_bits must be non-negative")

    @classmethod
    def for_channel(cls, total_bits: int, cfg: ChannelConfig, scheme: str = STRIDE, seed: int = 0):
        param = 8 * cfg.block_bytes if scheme == STRIDE else seed
        return cls(scheme, int(param), int(total_bits))

    @property
    def scheme_id(self) -> int:
        return _SCHEME_IDS[self.scheme]

    def positions(self) -> np.ndarray:
        """``positions()[i]`` is where pre-interleave bit ``i`` is transmitted."""
        if "pos" not in self._cache:
            self._cache["pos"] = self._build()
        return self._cache["pos"]

    def _build(self) -> np.ndarray:
        n = self.total_bits
        if self.scheme == PERMUTATION:
            return np.random.default_rng(self.param).permutation(n)
        d = self.param
        rows = max(1, math.ceil(n / d))
        last = n - (rows - 1) * d  # length of the ragged final row
        i = np.arange(n)
        r, c = i // d, i % d
        return c * rows - np.maximum(0, c - last) + r


def _check_len(bits: np.ndarray, spec: InterleaverSpec) -> np.ndarray:
    flat = np.asarray(bits).reshape(-1)
    if flat.size != spec.total_bits:
        raise ValueError(f"interleaver built for {spec.total_bits} bits, got {flat.size}")
    return flat


def interleave(bits: np.ndarray, spec: InterleaverSpec) -> np.ndarray:
    flat = _check_len(bits, spec)
    out = np.empty_like(flat)
    out[spec.positions()] = flat
    return out


def deinterleave(bits: np.ndarray, spec: InterleaverSpec) -> np.ndarray:
    flat = _check_len(bits, spec)
    return flat[spec.positions()]


# -- channel -----------------------------------------------------------------


def flip_quota(pe: float, ones: int) -> int:
    """round(pe/100 * ones), halves rounded up."""
    return int(math.floor(float(pe) * ones / 100.0 + 0.5))


def apply_channel(pixels: np.ndarray, cfg: ChannelConfig) -> tuple[np.ndarray, ErrorReport]:
    """Corrupt an image-domain stream in whole blocks until the ones quota is met.

    Blocks are drawn uniformly without replacement. BBEC turns every 255 in a
    drawn block into 0; BBSC inverts every pixel. The last drawn block is
    processed in order only up to the pixel that completes the quota.
    """
    src = np.asarray(pixels)
    flat = src.reshape(-1)
    if np.any((flat != 0) & (flat != 255)):
        raise DomainError("channel input must be image-domain bytes in {0, 255}")
    out = flat.copy()
    ones_mask = flat == 255
    ones = int(ones_mask.sum())
    target = flip_quota(cfg.pe, ones)
    if cfg.pe > 0 and ones == 0:
        warnings.warn("channel quota unreachable: payload has no ones", RuntimeWarning, stacklevel=2)
    if target == 0:
        return out.reshape(src.shape), ErrorReport(ones_before=ones)

    block = 8 * cfg.block_bytes
    n_blocks = math.ceil(flat.size / block)
    order = np.random.default_rng(cfg.seed).permutation(n_blocks)
    flipped = zeros_flipped = hit = 0
    for b in order:
        lo, hi = b * block, min((b + 1) * block, flat.size)
        hit += 1
        seg_ones = np.flatnonzero(ones_mask[lo:hi])
        need = target - flipped
        if seg_ones.size >= need:
            stop = lo + seg_ones[need - 1] + 1  # through the pixel completing the quota
            last = True
        else:
            stop = hi
            last = False
        if cfg.model == BBEC:
            idx = lo + seg_ones[seg_ones < stop - lo]
            out[idx] = 0
        else:
            out[lo:stop] = 255 - flat[lo:stop]
            zeros_flipped += int((~ones_mask[lo:stop]).sum())
        flipped += min(seg_ones.size, need)
        if last:
            break
    return out.reshape(src.shape), ErrorReport(hit, flipped, zeros_flipped, ones)


def transmit_bits(bits: np.ndarray, spec: InterleaverSpec, cfg: ChannelConfig) -> tuple[np.ndarray, ErrorReport]:
    """Tensor-domain bits -> interleave -> channel -> deinterleave, same shape out."""
    values = np.asarray(bits)
    tx = to_image_domain(interleave(values, spec))
    rx, report = apply_channel(tx, cfg)
    back = deinterleave(to_tensor_domain(rx).values, spec)
    return back.reshape(values.shape), report


# -- latent frame ------------------------------------------------------------

FRAME_MAGIC = b"DS2C"
FRAME_VERSION = 1
_HEADER = struct.Struct("<4sBHHHBQQ")


class FrameError(ValueError):
    pass


class FrameMagicError(FrameError):
    pass


class FrameVersionError(FrameError):
    pass


class FrameCRCError(FrameError):
    pass


def frame_encode(bits: LatentBits, spec: InterleaverSpec, binarizer_seed: int = 0) -> bytes:
    """Serialize bits (given in latent order) as an interleaved, CRC-protected frame."""
    if len(bits.shape) != 3:
        raise ValueError(f"frame needs a (C, H, W) latent, got {bits.shape}")
    c, h, w = bits.shape
    payload = pack_bits(interleave(bits.values, spec))
    header = _HEADER.pack(FRAME_MAGIC, FRAME_VERSION, c, h, w, spec.scheme_id,
                          spec.param & 0xFFFFFFFFFFFFFFFF, int(binarizer_seed) & 0xFFFFFFFFFFFFFFFF)
    body = header + payload
    return body + struct.pack("<I", zlib.crc32(body))


def frame_decode(data: bytes) -> tuple[LatentBits, InterleaverSpec, int]:
    if len(data) < _HEADER.size + 4:
        raise FrameError(f"frame too short: {len(data)} bytes")
    magic, version, c, h, w, scheme_id, param, bseed = _HEADER.unpack_from(data)
    if magic != FRAME_MAGIC:
        raise FrameMagicError(f"bad frame magic {magic!r}")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise FrameCRCError("frame CRC mismatch")
    if version != FRAME_VERSION:
        raise FrameVersionError(f"unsupported frame version {version}")
    n = c * h * w
    payload = body[_HEADER.size:]
    if len(payload) != (n + 7) // 8:
        raise FrameError(f"payload length {len(payload)} inconsistent with latent {(c, h, w)}")
    scheme = {v: k for k, v in _SCHEME_IDS.items()}.get(scheme_id)
    if scheme is None:
        raise FrameError(f"unknown interleaver scheme id {scheme_id}")
    spec = InterleaverSpec(scheme, int(param), n)
    sent = unpack_bits(payload, (n,)).values
    bits = LatentBits(deinterleave(sent, spec).reshape(c, h, w), {"seed": int(bseed)})
    return bits, spec, int(bseed)


def frame_payload_length(latent_shape) -> int:
    return (math.prod(latent_shape) + 7) // 8
