"""Network blocks of the layered codec.

Enhancement layer: residual encoder/decoder and SumNet. Base layer: CompNet
(coarse thumbnail), recursive FineNet steps and multi-scale discriminators.
All blocks are plain functions of a :class:`ModelParams` and input tensors.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from ..autodiff import ShapeError, Tensor, ops
from . import plan as P

ENHANCEMENT = "enhancement"
BASE = "base"


@dataclass
class ModelParams:
    tensors: dict[str, Tensor]
    meta: dict = field(default_factory=dict)

    def __getitem__(self, key: str) -> Tensor:
        return self.tensors[key]

    def __contains__(self, key: str) -> bool:
        return key in self.tensors

    def parameters(self, prefix: str = "") -> list[Tensor]:
        return [t for k, t in self.tensors.items() if k.startswith(prefix)]

    def names(self, prefix: str = "") -> list[str]:
        return [k for k in self.tensors if k.startswith(prefix)]

    def count(self, prefix: str = "") -> int:
        return sum(t.size for t in self.parameters(prefix))

    def clone(self) -> "ModelParams":
        tensors = {k: Tensor(t.data.copy(), requires_grad=True, name=k) for k, t in self.tensors.items()}
        return ModelParams(tensors, copy.deepcopy(self.meta))

    def frozen(self) -> "ModelParams":
        """Copy whose tensors never record gradients."""
        tensors = {k: Tensor(t.data, requires_grad=False, name=k) for k, t in self.tensors.items()}
        return ModelParams(tensors, copy.deepcopy(self.meta))

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def digest(self) -> bytes:
        import hashlib
        h = hashlib.sha256()
        for k, t in self.tensors.items():
            h.update(k.encode())
            h.update(np.ascontiguousarray(t.data).tobytes())
        return h.digest()


# -- enhancement-layer configuration ------------------------------------------


@dataclass(frozen=True)
class CodecConfig:
    """Widths of the residual codec; latent is ``latent_channels x H/8 x W/8``."""

    image_channels: int = 3
    widths: tuple[int, int] = (32, 64)
    latent_channels: int = 4
    sumnet_width: int = 16
    sumnet_blocks: int = 3

    def encoder_plan(self) -> list[P.Layer]:
        a, b = self.widths
        return [
            P.conv(self.image_channels, a, 5, 2), P.norm(a),
            P.conv(a, b, 5, 2), P.norm(b),
            P.resblock(b),
            P.conv(b, self.latent_channels, 5, 2),
            P.act(P.TANH, self.latent_channels),
        ]

    def decoder_plan(self) -> list[P.Layer]:
        a, b = self.widths
        return [
            P.conv(self.latent_channels, 4 * b, 3), P.shuffle(4 * b), P.norm(b, inverse=True),
            P.resblock(b),
            P.conv(b, 4 * a, 3), P.shuffle(4 * a), P.norm(a, inverse=True),
            P.conv(a, 4 * self.image_channels, 3), P.shuffle(4 * self.image_channels),
        ]

    def sumnet_plan(self) -> list[P.Layer]:
        w = self.sumnet_width
        return ([P.conv(2 * self.image_channels, w, 3), P.act(P.LRELU, w)]
                + [P.resblock(w) for _ in range(self.sumnet_blocks)]
                + [P.conv(w, self.image_channels, 3, zero_init=True)])

    def latent_shape(self, image_shape: Sequence[int]) -> tuple[int, int, int]:
        return P.output_shape(self.encoder_plan(), image_shape)


def init_enhancement(cfg: CodecConfig, image_shape: Sequence[int], seed: int, dtype=np.float32) -> ModelParams:
    rng = np.random.default_rng(seed)
    tensors = {}
    tensors.update(P.init_params(cfg.encoder_plan(), "enc", rng, dtype))
    tensors.update(P.init_params(cfg.decoder_plan(), "dec", rng, dtype))
    tensors.update(P.init_params(cfg.sumnet_plan(), "sum", rng, dtype))
    latent = cfg.latent_shape(image_shape)
    back = P.output_shape(cfg.decoder_plan(), latent)
    if tuple(back) != tuple(image_shape):
        raise ValueError(f"decoder maps latent {latent} to {back}, not the image shape {tuple(image_shape)}")
    meta = {
        "kind": ENHANCEMENT,
        "codec": _codec_meta(cfg),
        "input_shape": list(image_shape),
        "latent_shape": list(latent),
        "seed": int(seed),
        "pe_train": 0.0,
        "epochs": 0,
    }
    return ModelParams(tensors, meta)


def _codec_meta(cfg: CodecConfig) -> dict:
    return {"image_channels": cfg.image_channels, "widths": list(cfg.widths),
            "latent_channels": cfg.latent_channels, "sumnet_width": cfg.sumnet_width,
            "sumnet_blocks": cfg.sumnet_blocks}


def codec_config(params: ModelParams) -> CodecConfig:
    m = params.meta["codec"]
    return CodecConfig(m["image_channels"], tuple(m["widths"]), m["latent_channels"],
                       m["sumnet_width"], m["sumnet_blocks"])


def _check_image(t: Tensor, shape: Sequence[int], what: str) -> None:
    if tuple(t.shape[-3:]) != tuple(shape):
        raise ShapeError(f"{what}: expected trailing shape {tuple(shape)}, got {t.shape}")


def bresnet_encode(params: ModelParams, r: Tensor) -> Tensor:
    """Residual image -> pre-binarization latent in (-1, 1)."""
    _check_image(r, params.meta["input_shape"], "bresnet_encode")
    return P.run(codec_config(params).encoder_plan(), params, "enc", r)


def bresnet_decode(params: ModelParams, bits: Tensor) -> Tensor:
    """Binary latent -> residual estimate clamped to [-2, 2]."""
    _check_image(bits, params.meta["latent_shape"], "bresnet_decode")
    return ops.clamp(P.run(codec_config(params).decoder_plan(), params, "dec", bits), -2.0, 2.0)


def sumnet(params: ModelParams, x_prime: Tensor, r_hat: Tensor) -> Tensor:
    """x_hat = clamp(x' + r_hat + correction(x', r_hat), -1, 1)."""
    if x_prime.shape != r_hat.shape:
        raise ShapeError(f"sumnet: x' {x_prime.shape} and r_hat {r_hat.shape} differ")
    corr = P.run(codec_config(params).sumnet_plan(), params, "sum", ops.concat_channels([x_prime, r_hat]))
    return ops.clamp(x_prime + r_hat + corr, -1.0, 1.0)


# -- base layer --------------------------------------------------------------


@dataclass(frozen=True)
class BaseConfig:
    image_channels: int = 3
    factor: int = 4
    compnet: str = "learned"  # fixed | learned
    comp_width: int = 16
    fine_width: int = 16
    steps: int = 2  # recursive refinement steps J
    scales: int = 3  # discriminator scales I
    disc_widths: tuple[int, int, int] = (16, 32, 32)
    semantic: bool = False

    def cond_channels(self) -> int:
        return self.image_channels + (1 if self.semantic else 0)

    def comp_enc_plan(self) -> list[P.Layer]:
        n = int(round(math.log2(self.factor)))
        layers = []
        cin = self.image_channels
        for _ in range(n):
            layers += [P.conv(cin, self.comp_width, 3, 2), P.act(P.LRELU, self.comp_width)]
            cin = self.comp_width
        layers.append(P.conv(cin, self.image_channels, 3, zero_init=True))
        return layers

    def comp_dec_plan(self) -> list[P.Layer]:
        w, c = self.comp_width, self.image_channels
        return [P.conv(c, w, 3), P.act(P.LRELU, w), P.conv(w, c, 3, zero_init=True)]

    def fine_plan(self) -> list[P.Layer]:
        w = self.fine_width
        return [P.conv(self.cond_channels(), w, 3), P.act(P.LRELU, w),
                P.conv(w, w, 3), P.act(P.LRELU, w),
                P.conv(w, self.image_channels, 3, zero_init=True)]

    def disc_plan(self) -> list[P.Layer]:
        a, b, c = self.disc_widths
        cin = self.image_channels + self.cond_channels()
        return [P.conv(cin, a, 3, 2), P.act(P.LRELU, a),
                P.conv(a, b, 3, 2), P.act(P.LRELU, b),
                P.conv(b, c, 3, 2), P.act(P.LRELU, c),
                P.conv(c, 1, 1, p=0)]


def init_base(cfg: BaseConfig, image_shape: Sequence[int], seed: int, dtype=np.float32) -> ModelParams:
    if cfg.factor & (cfg.factor - 1):
        raise ValueError(f"factor must be a power of two, got {cfg.factor}")
    rng = np.random.default_rng(seed)
    tensors = {}
    if cfg.compnet == "learned":
        tensors.update(P.init_params(cfg.comp_enc_plan(), "comp.enc", rng, dtype))
        tensors.update(P.init_params(cfg.comp_dec_plan(), "comp.dec", rng, dtype))
    for j in range(cfg.steps):
        tensors.update(P.init_params(cfg.fine_plan(), f"fine{j}", rng, dtype))
    for j in range(cfg.steps):
        for i in range(cfg.scales):
            tensors.update(P.init_params(cfg.disc_plan(), f"disc{j}.s{i}", rng, dtype))
    meta = {
        "kind": BASE,
        "base": {"image_channels": cfg.image_channels, "factor": cfg.factor, "compnet": cfg.compnet,
                 "comp_width": cfg.comp_width, "fine_width": cfg.fine_width, "steps": cfg.steps,
                 "scales": cfg.scales, "disc_widths": list(cfg.disc_widths), "semantic": cfg.semantic},
        "input_shape": list(image_shape),
        "seed": int(seed),
        "pe_train": 0.0,
        "epochs": 0,
    }
    return ModelParams(tensors, meta)


def base_config(params: ModelParams) -> BaseConfig:
    m = dict(params.meta["base"])
    m["disc_widths"] = tuple(m["disc_widths"])
    return BaseConfig(**m)


def compnet_coarse(x: Tensor, factor: int, mode: str = "fixed", params: ModelParams | None = None):
    """Coarse thumbnail ``c`` (H/factor) and its full-size upsampling ``c'``.

    Fixed mode: average-pool then bilinear upsampling. Learned mode adds
    zero-initialized convolutional corrections to both paths, so an untrained
    learned CompNet coincides with the fixed one.
    """
    h, w = x.shape[-2:]
    if h % factor or w % factor:
        raise ShapeError(f"compnet: spatial dims {(h, w)} not divisible by factor {factor}")
    c = ops.avg_pool2d(x, factor)
    if mode == "learned":
        if params is None:
            raise ValueError("learned CompNet needs params")
        cfg = base_config(params)
        c = ops.clamp(c + P.run(cfg.comp_enc_plan(), params, "comp.enc", x), -1.0, 1.0)
    elif mode != "fixed":
        raise ValueError(f"unknown CompNet mode {mode!r}")
    c_prime = upsample_coarse(c, factor, mode, params)
    return c, c_prime


def upsample_coarse(c: Tensor, factor: int, mode: str = "fixed", params: ModelParams | None = None) -> Tensor:
    up = ops.upsample_bilinear(c, factor)
    if mode == "learned":
        cfg = base_config(params)
        up = ops.clamp(up + P.run(cfg.comp_dec_plan(), params, "comp.dec", up), -1.0, 1.0)
    return up


def _with_semantic(x: Tensor, s: Tensor | None) -> Tensor:
    if s is None:
        return x
    if s.shape[-2:] != x.shape[-2:] or s.ndim != x.ndim:
        raise ShapeError(f"semantic map {s.shape} does not match image {x.shape}")
    return ops.concat_channels([x, s])


def finenet_step(params: ModelParams, step: int, s: Tensor | None, base: Tensor):
    """One refinement step: returns (f, clamp(base + f, -1, 1))."""
    cfg = base_config(params)
    if cfg.semantic and s is None:
        raise ShapeError("finenet: model was built with a semantic channel but s is missing")
    inp = _with_semantic(base, s if cfg.semantic else None)
    f = P.run(cfg.fine_plan(), params, f"fine{step}", inp)
    return f, ops.clamp(base + f, -1.0, 1.0)


def synthesize(params: ModelParams, c_prime: Tensor, s: Tensor | None = None, steps: int | None = None) -> list[Tensor]:
    """Run the recursive FineNet chain; returns the refined images x'_1..x'_J."""
    cfg = base_config(params)
    out = []
    cur = c_prime
    for j in range(cfg.steps if steps is None else steps):
        _, cur = finenet_step(params, j, s, cur)
        out.append(cur)
    return out


def discnet_scores(params: ModelParams, step: int, s: Tensor | None, c_prime: Tensor, candidate: Tensor) -> list[Tensor]:
    """Per-scale realness scores in (0, 1), full resolution first.

    Each scale sees the candidate concatenated with c' (and s), average-pooled
    by 2**scale. Scores have shape ``(N,)`` for batches, ``()`` for one image.
    """
    cfg = base_config(params)
    if candidate.shape != c_prime.shape:
        raise ShapeError(f"discnet: candidate {candidate.shape} and c' {c_prime.shape} differ")
    inp = ops.concat_channels([candidate, _with_semantic(c_prime, s if cfg.semantic else None)])
    scores = []
    for i in range(cfg.scales):
        x = ops.avg_pool2d(inp, 2 ** i) if i else inp
        logits = P.run(cfg.disc_plan(), params, f"disc{step}.s{i}", x)
        scores.append(ops.sigmoid(ops.mean(logits, axis=(-3, -2, -1))))
    return scores


def with_meta(params: ModelParams, **updates) -> ModelParams:
    meta = dict(params.meta)
    meta.update(updates)
    return replace(params, meta=meta)
