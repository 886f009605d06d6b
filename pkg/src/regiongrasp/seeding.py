"""Deterministic seed derivation.

A single global seed fans out to per-component streams via
``derive_seed(seed, tag)`` so that independent pipeline stages never share
(or collide on) RNG state.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(seed: int, tag: str) -> int:
    """Map (seed, component-tag) to a 63-bit stream seed."""
    digest = hashlib.sha256(f"{seed}:{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFFFFFFFFFFFFFF


def rng_for(seed: int, tag: str) -> np.random.Generator:
    """Seeded generator for one component stream."""
    return np.random.default_rng(derive_seed(seed, tag))
