"""Layered image transmission over block-erasure channels, on a small numpy autodiff core."""

__version__ = "0.1.0"
