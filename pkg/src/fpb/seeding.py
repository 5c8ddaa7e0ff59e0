"""Deterministic RNG derivation.

All randomness in the package flows from a single root seed. Independent
streams are derived by combining the root seed with a stable label digest,
so adding a new consumer never perturbs existing streams. Python's builtin
hash() is salted per process and must not be used here.
"""

from __future__ import annotations

import zlib

import numpy as np


def rng_for(seed: int, label: str) -> np.random.Generator:
    """A generator for stream ``label`` under root ``seed``.

    Same (seed, label) always yields an identical stream, across processes.
    """
    return np.random.default_rng([int(seed), zlib.crc32(label.encode("utf-8"))])


def derive_seed(seed: int, label: str) -> int:
    """A child integer seed for stream ``label`` (for APIs that take an int)."""
    return int(rng_for(seed, label).integers(0, 2**31 - 1))
