from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


class GradCheckError(FloatingPointError):
    pass


def grad_check(
    fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    floor: float = 1e-4,
    max_elements: int = 2000,
    seed: int = 0,
    analytic: Sequence[np.ndarray] | None = None,
) -> float:
    """Worst relative error between backprop and central differences.

    ``fn`` is a closure over ``params`` returning a single-element tensor.
    Relative error per element is ``|a - n| / max(|a|, |n|, floor)``, so
    gradients smaller than ``floor`` are compared absolutely. Tensors with
    more than ``max_elements`` entries are checked on a seeded sample.
    ``analytic`` overrides the backprop gradients (fault-injection tests).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if analytic is None:
        for p in params:
            p.zero_grad()
        out = fn()
        _require_finite(out.data, "output", -1, -1)
        backward(out)
        analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for k, p in enumerate(params):
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if flat.size > max_elements:
            idx = np.sort(rng.choice(flat.size, size=max_elements, replace=False))
        a_flat = np.asarray(analytic[k]).reshape(-1)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(fn().data.reshape(-1)[0])
            flat[i] = orig - eps
            fm = float(fn().data.reshape(-1)[0])
            flat[i] = orig
            num = (fp - fm) / (2.0 * eps)
            _require_finite(np.array([fp, fm, a_flat[i]]), "value", k, int(i))
            a = float(a_flat[i])
            err = abs(a - num) / max(abs(a), abs(num), floor)
            worst = max(worst, err)
    return worst


def _require_finite(values: np.ndarray, what: str, param: int, index: int) -> None:
    if not np.all(np.isfinite(values)):
        raise GradCheckError(f"non-finite {what} at parameter {param}, element {index}")
