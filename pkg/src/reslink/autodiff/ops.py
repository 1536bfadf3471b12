"""Differentiable operators over :class:`Tensor`.

Inputs may be ``(C, H, W)`` images or ``(N, C, H, W)`` batches; spatial ops
treat the last two axes as height and width. Elementwise ops accept equal
shapes or a scalar / single-element operand on either side.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, make_result

BETA_MIN = 1e-6
LEAKY_SLOPE = 0.2


class ShapeError(ValueError):
    pass


class ParameterDomainError(ValueError):
    pass


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, a)
    b = as_tensor(b)
    return as_tensor(a, b), b


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ; only scalar broadcasting is allowed")


def _reduce_to(g: np.ndarray, t: Tensor) -> np.ndarray:
    if g.shape == t.shape:
        return g
    return np.asarray(g.sum(), dtype=g.dtype).reshape(t.shape)


# -- elementwise -------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "add")
    return make_result(a.data + b.data, (a, b), "add",
                       lambda g: (_reduce_to(g, a), _reduce_to(g, b)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "sub")
    return make_result(a.data - b.data, (a, b), "sub",
                       lambda g: (_reduce_to(g, a), _reduce_to(-g, b)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data
    return make_result(ad * bd, (a, b), "mul",
                       lambda g: (_reduce_to(g * bd, a), _reduce_to(g * ad, b)))


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd
    return make_result(out, (a, b), "div",
                       lambda g: (_reduce_to(g / bd, a), _reduce_to(-g * out / bd, b)))


def neg(a: Tensor) -> Tensor:
    return make_result(-a.data, (a,), "neg", lambda g: (-g,))


def absolute(a: Tensor) -> Tensor:
    sign = np.sign(a.data)
    return make_result(np.abs(a.data), (a,), "abs", lambda g: (g * sign,))


def power(a: Tensor, exponent: float) -> Tensor:
    p = float(exponent)
    x = a.data
    return make_result(x ** p, (a,), "pow", lambda g: (g * p * x ** (p - 1.0),))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return make_result(out, (a,), "sqrt", lambda g: (g * 0.5 / out,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return make_result(out, (a,), "exp", lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    x = a.data
    return make_result(np.log(x), (a,), "log", lambda g: (g / x,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return make_result(out, (a,), "tanh", lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return make_result(out, (a,), "sigmoid", lambda g: (g * out * (1.0 - out),))


def leaky_relu(a: Tensor, slope: float = LEAKY_SLOPE) -> Tensor:
    x = a.data
    scale = np.where(x > 0, 1.0, slope).astype(x.dtype)
    return make_result(x * scale, (a,), "leaky_relu", lambda g: (g * scale,))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    x = a.data
    mask = ((x >= lo) & (x <= hi)).astype(x.dtype)
    return make_result(np.clip(x, lo, hi), (a,), "clamp", lambda g: (g * mask,))


def straight_through(a: Tensor, value: np.ndarray) -> Tensor:
    """Forward ``value``; backward passes the gradient to ``a`` unchanged."""
    value = np.asarray(value, dtype=a.dtype)
    if value.shape != a.shape:
        raise ShapeError(f"straight_through: value shape {value.shape} != input shape {a.shape}")
    return make_result(value.copy(), (a,), "straight_through", lambda g: (g,))


# -- reductions and reshapes -------------------------------------------------


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = a.data
    out = np.asarray(x.sum(axis=axis, keepdims=keepdims))

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return make_result(out, (a,), "sum", vjp)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    x = a.data
    count = x.size if axis is None else int(np.prod([x.shape[i] for i in np.atleast_1d(axis)]))
    out = np.asarray(x.mean(axis=axis, keepdims=keepdims), dtype=x.dtype)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape).astype(x.dtype),)

    return make_result(out, (a,), "mean", vjp)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    return make_result(a.data.reshape(shape), (a,), "reshape", lambda g: (g.reshape(src),))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = list(tensors)
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError(f"concat: shape {t.shape} incompatible with {ref} along axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=ax)
    return make_result(out, tensors, "concat", lambda g: tuple(np.split(g, splits, axis=ax)))


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    return concat(tensors, axis=-3)


# -- spatial -----------------------------------------------------------------


def _batched(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 4:
        raise ShapeError(f"expected (C,H,W) or (N,C,H,W) input, got shape {x.shape}")
    return x, False


def _unbatch(y: Tensor, squeeze: bool) -> Tensor:
    return reshape(y, y.shape[1:]) if squeeze else y


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation, weight laid out ``(F, C, K, K)``."""
    if weight.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise ShapeError(f"conv2d: weight must be (F,C,K,K), got {weight.shape}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d: stride must be >= 1 and padding >= 0 (got {stride}, {padding})")
    xb, squeeze = _batched(x)
    n, c, h, w = xb.shape
    f, wc, k, _ = weight.shape
    if wc != c:
        raise ShapeError(f"conv2d: input channels {c} != weight in_channels {wc}")
    if h + 2 * padding < k or w + 2 * padding < k:
        raise ShapeError(f"conv2d: padded spatial size {(h + 2 * padding, w + 2 * padding)} smaller than kernel {k}")
    if bias is not None and bias.shape != (f,):
        raise ShapeError(f"conv2d: bias shape {bias.shape} != ({f},)")
    xd = xb.data
    if padding:
        xd = np.pad(xd, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    col = _im2col(xd, k, stride, ho, wo)  # (C*K*K, N*Ho*Wo)
    wd = weight.data
    w2 = wd.reshape(f, -1)
    out = (w2 @ col).reshape(f, n, ho, wo)
    if bias is not None:
        out += bias.data[:, None, None, None]
    out = np.ascontiguousarray(out.transpose(1, 0, 2, 3), dtype=xd.dtype)
    padded_shape = xd.shape

    def vjp(g):
        gm = g.transpose(1, 0, 2, 3).reshape(f, -1)
        gw = (gm @ col.T).reshape(wd.shape) if weight.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        gx = None
        if xb.requires_grad:
            gx = _col2im(w2.T @ gm, padded_shape, k, stride, ho, wo)
            if padding:
                gx = gx[:, :, padding:padding + h, padding:padding + w]
        return gx, gw, gb

    parents = (xb, weight) + ((bias,) if bias is not None else ())
    return _unbatch(make_result(out, parents, "conv2d", vjp), squeeze)


def _im2col(xd: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    n, c = xd.shape[:2]
    win = sliding_window_view(xd, (k, k), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    return win.transpose(1, 4, 5, 0, 2, 3).reshape(c * k * k, n * ho * wo)


def _col2im(gcol: np.ndarray, padded_shape, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`: scatter-add columns back onto the padded input."""
    n, c, hp, wp = padded_shape
    g6 = gcol.reshape(c, k, k, n, ho, wo)
    acc = np.zeros((c, n, hp, wp), dtype=gcol.dtype)
    he, we = stride * (ho - 1) + 1, stride * (wo - 1) + 1
    for ki in range(k):
        for kj in range(k):
            acc[:, :, ki:ki + he:stride, kj:kj + we:stride] += g6[:, ki, kj]
    return acc.transpose(1, 0, 2, 3)


def gdn(x: Tensor, beta: Tensor, gamma: Tensor, inverse: bool = False) -> Tensor:
    """Generalized divisive normalization (``inverse=True`` gives IGDN).

    Per pixel ``d_i = sqrt(beta_i + sum_j gamma_ij x_j^2)``; GDN returns
    ``x_i / d_i`` and IGDN ``x_i * d_i``.
    """
    xb, squeeze = _batched(x)
    c = xb.shape[1]
    if beta.shape != (c,) or gamma.shape != (c, c):
        raise ShapeError(f"gdn: channels {c} need beta ({c},) and gamma ({c},{c}); got {beta.shape}, {gamma.shape}")
    if np.any(beta.data < BETA_MIN):
        raise ParameterDomainError(f"gdn: beta below beta_min={BETA_MIN}: min {beta.data.min()}")
    if np.any(gamma.data < 0):
        raise ParameterDomainError(f"gdn: negative gamma entry {gamma.data.min()}")
    xd = xb.data
    x2 = xd * xd
    n, _, hh, ww = xd.shape
    gm = gamma.data

    def mix(m, a):  # sum_j m[i, j] a[n, j, h, w]
        return (m @ a.reshape(n, c, hh * ww)).reshape(a.shape)

    norm = beta.data[None, :, None, None] + mix(gm, x2)
    d = np.sqrt(norm)
    out = xd * d if inverse else xd / d

    def vjp(g):
        if inverse:
            gx_direct = g * d
            gn = g * xd / (2.0 * d)
        else:
            gx_direct = g / d
            gn = -g * out / (2.0 * norm)
        gbeta = gn.sum(axis=(0, 2, 3))
        ggamma = np.tensordot(gn, x2, axes=([0, 2, 3], [0, 2, 3]))
        gx = gx_direct + 2.0 * xd * mix(gm.T, gn)
        return gx, gbeta, ggamma

    return _unbatch(make_result(out.astype(xd.dtype), (xb, beta, gamma), "igdn" if inverse else "gdn", vjp), squeeze)


def pixel_shuffle(x: Tensor, factor: int) -> Tensor:
    """Rearrange ``(C*U^2, H, W)`` into ``(C, H*U, W*U)``."""
    xb, squeeze = _batched(x)
    n, cu, h, w = xb.shape
    u = int(factor)
    if u < 1 or cu % (u * u):
        raise ShapeError(f"pixel_shuffle: channels {cu} not divisible by factor^2={u * u}")
    c = cu // (u * u)
    out = xb.data.reshape(n, c, u, u, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, h * u, w * u)

    def vjp(g):
        return (g.reshape(n, c, h, u, w, u).transpose(0, 1, 3, 5, 2, 4).reshape(n, cu, h, w),)

    return _unbatch(make_result(np.ascontiguousarray(out), (xb,), "pixel_shuffle", vjp), squeeze)


def pixel_unshuffle(x: np.ndarray, factor: int) -> np.ndarray:
    """Inverse rearrangement of :func:`pixel_shuffle` on plain arrays."""
    squeeze = x.ndim == 3
    xb = x[None] if squeeze else x
    n, c, hu, wu = xb.shape
    u = factor
    h, w = hu // u, wu // u
    out = xb.reshape(n, c, h, u, w, u).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * u * u, h, w)
    return out[0] if squeeze else out


def avg_pool2d(x: Tensor, k: int) -> Tensor:
    xb, squeeze = _batched(x)
    n, c, h, w = xb.shape
    if h % k or w % k:
        raise ShapeError(f"avg_pool2d: spatial {(h, w)} not divisible by {k}")
    out = xb.data.reshape(n, c, h // k, k, w // k, k).mean(axis=(3, 5))

    def vjp(g):
        return (np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k),)

    return _unbatch(make_result(out.astype(xb.dtype), (xb,), "avg_pool2d", vjp), squeeze)


def _interp_matrix(n_in: int, factor: int, dtype) -> np.ndarray:
    n_out = n_in * factor
    src = (np.arange(n_out) + 0.5) / factor - 0.5
    src = np.clip(src, 0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w1 = src - i0
    m = np.zeros((n_out, n_in), dtype=np.float64)
    m[np.arange(n_out), i0] += 1.0 - w1
    m[np.arange(n_out), i1] += w1
    return m.astype(dtype)


def upsample_bilinear(x: Tensor, factor: int) -> Tensor:
    """Bilinear upsampling with half-pixel centres and edge clamping."""
    xb, squeeze = _batched(x)
    _, _, h, w = xb.shape
    ah = _interp_matrix(h, factor, xb.dtype)
    aw = _interp_matrix(w, factor, xb.dtype)
    out = np.einsum("ah,nchw,bw->ncab", ah, xb.data, aw, optimize=True)

    def vjp(g):
        return (np.einsum("ah,ncab,bw->nchw", ah, g, aw, optimize=True),)

    return _unbatch(make_result(out, (xb,), "upsample_bilinear", vjp), squeeze)
