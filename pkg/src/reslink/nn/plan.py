"""Layer plans: declarative descriptions of the convolutional blocks."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..autodiff import Tensor, ops

CONV = "conv"
GDN = "gdn"
IGDN = "igdn"
PIXEL_SHUFFLE = "pixel_shuffle"
RESBLOCK = "resblock"
LRELU = "lrelu"
TANH = "tanh"


@dataclass(frozen=True)
class Layer:
    kind: str
    in_ch: int
    out_ch: int
    k: int = 0
    s: int = 1
    p: int = 0
    u: int = 1
    zero_init: bool = False


LayerPlan = Sequence[Layer]


def conv(cin, cout, k=3, s=1, p=None, zero_init=False) -> Layer:
    return Layer(CONV, cin, cout, k, s, k // 2 if p is None else p, zero_init=zero_init)


def norm(c, inverse=False) -> Layer:
    return Layer(IGDN if inverse else GDN, c, c)


def shuffle(cin, u=2) -> Layer:
    return Layer(PIXEL_SHUFFLE, cin, cin // (u * u), u=u)


def resblock(c) -> Layer:
    return Layer(RESBLOCK, c, c, 3, 1, 1)


def act(kind, c) -> Layer:
    return Layer(kind, c, c)


def validate(plan: LayerPlan) -> None:
    for i, layer in enumerate(plan):
        if layer.kind == PIXEL_SHUFFLE and layer.in_ch % (layer.u * layer.u):
            raise ValueError(f"layer {i}: {layer.in_ch} channels not divisible by {layer.u}^2")
        if i and plan[i - 1].out_ch != layer.in_ch:
            raise ValueError(f"layer {i} expects {layer.in_ch} channels, previous layer gives {plan[i - 1].out_ch}")


def output_shape(plan: LayerPlan, shape: Sequence[int]) -> tuple[int, int, int]:
    c, h, w = shape
    for i, layer in enumerate(plan):
        if layer.in_ch != c:
            raise ValueError(f"layer {i} expects {layer.in_ch} channels, got {c}")
        if layer.kind == CONV:
            h = (h + 2 * layer.p - layer.k) // layer.s + 1
            w = (w + 2 * layer.p - layer.k) // layer.s + 1
        elif layer.kind == PIXEL_SHUFFLE:
            h, w = h * layer.u, w * layer.u
        c = layer.out_ch
    return c, h, w


def _param_shapes(layer: Layer) -> list[tuple[str, tuple[int, ...]]]:
    if layer.kind == CONV:
        return [("weight", (layer.out_ch, layer.in_ch, layer.k, layer.k)), ("bias", (layer.out_ch,))]
    if layer.kind in (GDN, IGDN):
        return [("beta", (layer.in_ch,)), ("gamma", (layer.in_ch, layer.in_ch))]
    if layer.kind == RESBLOCK:
        c, k = layer.in_ch, layer.k
        return [("conv1.weight", (c, c, k, k)), ("conv1.bias", (c,)),
                ("conv2.weight", (c, c, k, k)), ("conv2.bias", (c,))]
    return []


def param_count(plan: LayerPlan) -> int:
    return sum(math.prod(shape) for layer in plan for _, shape in _param_shapes(layer))


def init_params(plan: LayerPlan, prefix: str, rng: np.random.Generator, dtype=np.float32) -> dict[str, Tensor]:
    """Centered uniform fan-in init; GDN starts at beta=1, gamma=0.1*I."""
    validate(plan)
    out: dict[str, Tensor] = {}
    for i, layer in enumerate(plan):
        for name, shape in _param_shapes(layer):
            key = f"{prefix}.{i}.{name}"
            if name.endswith("bias"):
                arr = np.zeros(shape)
            elif name == "beta":
                arr = np.ones(shape)
            elif name == "gamma":
                arr = 0.1 * np.eye(shape[0])
            elif layer.zero_init or (layer.kind == RESBLOCK and name.startswith("conv2")):
                arr = np.zeros(shape)
            else:
                fan_in = shape[1] * shape[2] * shape[3]
                bound = math.sqrt(3.0 / fan_in)
                arr = rng.uniform(-bound, bound, size=shape)
            out[key] = Tensor(arr.astype(dtype), requires_grad=True, name=key)
    return out


def run(plan: LayerPlan, params, prefix: str, x: Tensor) -> Tensor:
    for i, layer in enumerate(plan):
        key = f"{prefix}.{i}"
        if layer.kind == CONV:
            x = ops.conv2d(x, params[f"{key}.weight"], params[f"{key}.bias"], layer.s, layer.p)
        elif layer.kind in (GDN, IGDN):
            x = ops.gdn(x, params[f"{key}.beta"], params[f"{key}.gamma"], inverse=layer.kind == IGDN)
        elif layer.kind == PIXEL_SHUFFLE:
            x = ops.pixel_shuffle(x, layer.u)
        elif layer.kind == RESBLOCK:
            h = ops.conv2d(x, params[f"{key}.conv1.weight"], params[f"{key}.conv1.bias"], 1, layer.p)
            h = ops.leaky_relu(h)
            h = ops.conv2d(h, params[f"{key}.conv2.weight"], params[f"{key}.conv2.bias"], 1, layer.p)
            x = x + h
        elif layer.kind == LRELU:
            x = ops.leaky_relu(x)
        elif layer.kind == TANH:
            x = ops.tanh(x)
        else:
            raise ValueError(f"unknown layer kind {layer.kind!r}")
    return x
