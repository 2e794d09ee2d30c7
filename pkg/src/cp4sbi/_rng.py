"""Deterministic random-stream derivation.

All sampling in this package is driven by caller-owned numpy Generators.
Objects that need reproducible draws *at query time* (per-observation
cutoff sampling, KDE draws) derive a stream from a frozen integer seed
plus the bytes of the query point, so repeated queries agree without any
shared mutable state.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def as_vector(x, dim: int | None = None) -> np.ndarray:
    """Coerce to a C-contiguous 1-D float64 array, optionally checking length."""
    v = np.ascontiguousarray(np.asarray(x, dtype=np.float64))
    if v.ndim != 1:
        v = v.reshape(-1)
    if dim is not None and v.shape[0] != dim:
        raise ValueError(f"expected a vector of length {dim}, got shape {v.shape}")
    return v


def per_x_rng(seed: int, x, tag: str = "") -> np.random.Generator:
    """Generator derived deterministically from (seed, x, tag).

    Identical arguments always produce an identical stream; distinct tags
    give independent streams for the same observation.
    """
    v = as_vector(x)
    h = hashlib.blake2b(digest_size=16)
    h.update(tag.encode("utf-8"))
    h.update(v.tobytes())
    words = np.frombuffer(h.digest(), dtype=np.uint32)
    entropy = [int(seed) & _MASK64] + [int(w) for w in words]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def spawn_seed(rng: np.random.Generator) -> int:
    """Draw a fresh 63-bit seed from a caller-owned generator."""
    return int(rng.integers(0, 2**63 - 1))
