"""Minimal reverse-mode automatic differentiation over numpy arrays."""
from . import ops
from .gradcheck import GradCheckError, grad_check
from .ops import ParameterDomainError, ShapeError
from .tensor import Node, Tensor, backward, grad_enabled, no_grad, trace

__all__ = [
    "GradCheckError",
    "Node",
    "ParameterDomainError",
    "ShapeError",
    "Tensor",
    "backward",
    "grad_check",
    "grad_enabled",
    "no_grad",
    "ops",
    "trace",
]
