"""Deterministic random streams.

The project-wide generator is numpy's PCG64, wrapped in
``numpy.random.Generator``. PCG64 produces identical streams for a given
64-bit seed on every platform numpy supports, which is what makes the
pipeline's byte-level reproducibility guarantees possible. Every stochastic
operation in the package takes an explicit ``Generator``; nothing reads
global random state.

Per-frame seeds are derived from the master seed with the SplitMix64
finalizer. Its output mixing is a bijection on 64-bit integers, so distinct
frame indices always map to distinct seeds for a fixed master seed.
"""

from __future__ import annotations

import numpy as np

GENERATOR_NAME = "numpy.random.PCG64"

_MASK64 = 0xFFFF_FFFF_FFFF_FFFF
_GOLDEN_GAMMA = 0x9E37_79B9_7F4A_7C15


def make_rng(seed: int) -> np.random.Generator:
    """Create the project's deterministic generator for a 64-bit seed."""
    if not 0 <= seed <= _MASK64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return np.random.Generator(np.random.PCG64(seed))


def splitmix64(x: int) -> int:
    """SplitMix64 finalizer; a bijection on unsigned 64-bit integers."""
    x &= _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58_476D_1CE4_E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D0_49BB_1331_11EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


def derive_frame_seed(master_seed: int, frame_index: int) -> int:
    """Derive the per-frame seed ``splitmix64(master + (i+1) * gamma)``.

    The additive step uses an odd constant, so the pre-mix inputs are
    distinct for distinct frame indices; the bijective finalizer then keeps
    the outputs distinct as well.
    """
    if frame_index < 0:
        raise ValueError(f"frame_index must be non-negative, got {frame_index}")
    mixed = (master_seed + (frame_index + 1) * _GOLDEN_GAMMA) & _MASK64
    return splitmix64(mixed)
