"""Seed derivation for reproducible, order-independent random streams.

Every consumer of randomness asks for a stream by ``(seed, purpose, *indices)``.
The triple is mixed through :class:`numpy.random.SeedSequence` and feeds a
Philox counter-based bit generator, so replicate ``i`` of cell ``j`` gets the
same numbers whatever order (or thread) it runs in.
"""
from __future__ import annotations

import zlib

import numpy as np

GENERATOR_ID = "numpy-philox4x64-seedsequence"

_MASK64 = (1 << 64) - 1


def _tag(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


def derive_seed(seed: int, purpose: str, *indices: int) -> int:
    """Derive a 64-bit child seed for ``purpose`` and integer ``indices``."""
    ss = np.random.SeedSequence(int(seed) & _MASK64, spawn_key=(_tag(purpose), *map(int, indices)))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


def make_rng(seed: int, purpose: str, *indices: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed) & _MASK64, spawn_key=(_tag(purpose), *map(int, indices)))
    return np.random.Generator(np.random.Philox(ss))
