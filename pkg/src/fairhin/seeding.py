"""Labelled seed derivation so every stage draws from its own stream."""
from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(seed: int, *labels) -> int:
    """Deterministic 63-bit seed for ``(seed, *labels)``."""
    key = repr((int(seed),) + tuple(labels)).encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little") >> 1


def rng_for(seed: int, *labels) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *labels))
