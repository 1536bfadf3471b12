"""Labeled seed derivation: every random sub-process gets its own stream."""
from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(root: int, *labels) -> int:
    key = ":".join([str(int(root))] + [str(x) for x in labels])
    return int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "little") >> 1


def rng_for(root: int, *labels) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, *labels))
