"""Deterministic seed derivation.

Every source of randomness in the package draws from a numpy Generator (or a
torch Generator) seeded through this module. Seeds are derived by hashing a
(root_seed, *labels) tuple, so independent purposes get independent streams
and any stream can be reconstructed from the root seed alone. Training code
derives a fresh seed per (purpose, step), which is what makes resume-from-
checkpoint reproduce the original run without serializing RNG state.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(root_seed: int, *labels: object) -> int:
    """Derive a 63-bit seed from a root seed and a label path.

    Labels may be strings or integers; they are joined unambiguously before
    hashing so ("ab", "c") and ("a", "bc") differ.
    """
    h = hashlib.sha256()
    h.update(str(int(root_seed)).encode("utf-8"))
    for label in labels:
        h.update(b"\x1f")
        h.update(str(label).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


def rng_for(root_seed: int, *labels: object) -> np.random.Generator:
    """A numpy Generator for the given purpose labels."""
    return np.random.default_rng(derive_seed(root_seed, *labels))
