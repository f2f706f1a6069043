"""Deterministic RNG substream derivation.

Every stochastic component derives its generator from a root seed plus a
tuple of string/int tokens, so results are reproducible regardless of
iteration order or parallel scheduling.
"""

from __future__ import annotations

import hashlib

import numpy as np


def substream_seed(seed: int, *tokens: str | int) -> int:
    """Derive a 64-bit child seed from a root seed and a token path."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(seed)).encode("utf-8"))
    for tok in tokens:
        h.update(b"\x1f")
        h.update(str(tok).encode("utf-8"))
    return int.from_bytes(h.digest(), "big")


def substream(seed: int, *tokens: str | int) -> np.random.Generator:
    """PCG64 generator seeded from ``substream_seed(seed, *tokens)``."""
    return np.random.Generator(np.random.PCG64(substream_seed(seed, *tokens)))
