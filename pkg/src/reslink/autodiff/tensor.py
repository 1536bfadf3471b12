"""Tensor type and the reverse-mode tape.

Every differentiable op records a :class:`Node` carrying a monotonically
increasing id, its parent tensors and a closure computing the vector-Jacobian
product. :func:`backward` collects the nodes reachable from the output and
replays them by descending id, which is exactly reverse execution order.
"""
from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_ids = itertools.count()
_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Run ops without recording them (inference, parameter updates)."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


@dataclass(eq=False)
class Node:
    id: int
    op: str
    parents: tuple["Tensor", ...]
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node", "name")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.node: Node | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    # operator sugar; implementations live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __pow__(self, exponent):
        from . import ops
        return ops.power(self, exponent)

    def __abs__(self):
        from . import ops
        return ops.absolute(self)


def make_result(data: np.ndarray, parents: Sequence[Tensor], op: str, vjp) -> Tensor:
    """Wrap an op's forward result, recording a node when any parent needs grad."""
    out = Tensor(data, dtype=data.dtype)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.node = Node(next(_ids), op, tuple(parents), vjp)
    return out


def trace(output: Tensor) -> list[Node]:
    """Return the tape reachable from ``output``, in reverse execution order."""
    seen: dict[int, Node] = {}
    stack = [output]
    while stack:
        t = stack.pop()
        n = t.node
        if n is None or n.id in seen:
            continue
        seen[n.id] = n
        stack.extend(n.parents)
    return [seen[k] for k in sorted(seen, reverse=True)]


def backward(output: Tensor) -> None:
    """Accumulate d(output)/d(leaf) into ``.grad`` of every reachable leaf.

    Repeated calls accumulate; call ``zero_grad`` on the leaves to reset.
    """
    if output.data.size != 1:
        raise ValueError(f"backward needs a single-element output, got shape {output.shape}")
    seed = np.ones_like(output.data)
    if output.node is None:
        if output.requires_grad:
            _accumulate_leaf(output, seed)
        return
    pending: dict[int, np.ndarray] = {output.node.id: seed}
    for node in trace(output):
        g = pending.pop(node.id, None)
        if g is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            if pg.shape != parent.shape:
                raise RuntimeError(
                    f"{node.op}: gradient shape {pg.shape} does not match input shape {parent.shape}"
                )
            if parent.node is None:
                _accumulate_leaf(parent, pg)
            else:
                key = parent.node.id
                pending[key] = pg if key not in pending else pending[key] + pg


def _accumulate_leaf(t: Tensor, g: np.ndarray) -> None:
    g = g.astype(t.data.dtype, copy=False)
    t.grad = g.copy() if t.grad is None else t.grad + g
