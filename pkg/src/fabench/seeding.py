"""Deterministic 64-bit seed derivation.

Every stochastic component of the harness draws from a numpy Generator whose
seed is derived from a parent seed plus a path of string/int tokens. The mix
is the first 8 bytes (big endian) of BLAKE2b over the '\\x1f'-joined decimal /
utf-8 rendering of ``(seed, *tokens)``. Because child seeds depend only on the
path and never on evaluation order, serial and parallel runs agree bit for bit.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["mix", "rng_for"]


def mix(seed: int, *tokens: int | str) -> int:
    """Derive a 64-bit child seed from a parent seed and a token path."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(seed)).encode())
    for tok in tokens:
        h.update(b"\x1f")
        h.update(str(tok).encode())
    return int.from_bytes(h.digest(), "big")


def rng_for(seed: int, *tokens: int | str) -> np.random.Generator:
    """numpy Generator seeded by ``mix(seed, *tokens)``."""
    return np.random.Generator(np.random.PCG64(mix(seed, *tokens)))
