"""Forward passes shared by training and inference."""
from __future__ import annotations

import numpy as np

from ..autodiff import Tensor, no_grad, ops
from ..metrics import to_uint8
from ..nn import ModelParams, base_config, compnet_coarse, synthesize, upsample_coarse


def quantize_coarse(c: Tensor, ste: bool = False) -> Tensor:
    """Snap the coarse image to the 8-bit grid it is transmitted on."""
    q = to_uint8(c.data).astype(c.dtype) / np.asarray(127.5, c.dtype) - np.asarray(1.0, c.dtype)
    return ops.straight_through(c, q) if ste else Tensor(q)


def coarse_payload(base: ModelParams, x: Tensor) -> np.ndarray:
    """Base-layer thumbnail bytes ``c`` for a batch, uint8 ``(N, C, H/f, W/f)``."""
    cfg = base_config(base)
    with no_grad():
        c, _ = compnet_coarse(x, cfg.factor, cfg.compnet, base)
    return to_uint8(c.data)


def base_forward(base: ModelParams, x: Tensor, s: Tensor | None = None, ste: bool = True):
    """Differentiable base path: returns (c', [x'_1..x'_J]) with c on the 8-bit grid."""
    cfg = base_config(base)
    c, _ = compnet_coarse(x, cfg.factor, cfg.compnet, base)
    c_prime = upsample_coarse(quantize_coarse(c, ste), cfg.factor, cfg.compnet, base)
    return c_prime, synthesize(base, c_prime, s)


def synthesize_from_payload(base: ModelParams, c_bytes: np.ndarray, s: np.ndarray | None = None) -> np.ndarray:
    """Receiver side: x' from the error-free payloads (c, s)."""
    cfg = base_config(base)
    c = Tensor(c_bytes.astype(np.float32) / np.float32(127.5) - np.float32(1.0))
    with no_grad():
        c_prime = upsample_coarse(c, cfg.factor, cfg.compnet, base)
        refined = synthesize(base, c_prime, None if s is None else Tensor(s))
    return refined[-1].data if refined else c_prime.data


def synthesize_images(base: ModelParams, images: np.ndarray, labels: np.ndarray | None = None,
                      batch: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """x' and c bytes for a whole array of images, batched."""
    xs, cs = [], []
    for lo in range(0, len(images), batch):
        x = Tensor(images[lo:lo + batch])
        c = coarse_payload(base, x)
        s = None if labels is None else labels[lo:lo + batch]
        xs.append(synthesize_from_payload(base, c, s))
        cs.append(c)
    return np.concatenate(xs), np.concatenate(cs)
