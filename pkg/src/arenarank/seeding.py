"""Deterministic seed derivation shared by every stochastic component."""

from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _key(part: int | str) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part) & _MASK64


def derive_seed(master: int, *parts: int | str) -> int:
    """Mix a master seed with a path of keys into a 63-bit child seed.

    The result depends only on the inputs, never on call order, so resamples
    and trials give the same numbers whether run serially or in parallel.
    """
    entropy = [_key(master)] + [_key(p) for p in parts]
    state = np.random.SeedSequence(entropy).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def rng_for(master: int, *parts: int | str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *parts))
