"""Counter-based random streams.

Every random quantity in the package is a pure function of a 64-bit seed, a
purpose tag and an identity (a cell index, a vertex key, a vertex pair).  The
mixing function is the splitmix64 finalizer applied to a running hash, which
gives the reproducibility and order-independence needed for coupled
experiments: the uniform attached to an edge does not depend on the order in
which pairs are enumerated, and enlarging a box does not move existing points.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "TAG",
    "mix64",
    "hash_parts",
    "uniform",
    "derive_seed",
    "coord_keys",
    "generator",
]

_MASK = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)

# purpose tags; values are arbitrary but frozen (changing them changes every sample)
TAG = {
    "poisson_count": 0x11,
    "poisson_coord": 0x12,
    "poisson_point": 0x13,
    "lattice_site": 0x21,
    "mark": 0x31,
    "palm": 0x32,
    "edge": 0x41,
    "bond": 0x42,
    "cells": 0x43,
    "cell": 0x51,
    "replica": 0x61,
    "trial": 0x62,
}


def mix64(x):
    """splitmix64 finalizer on a uint64 array (wrapping arithmetic)."""
    z = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = z + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        z = z ^ (z >> np.uint64(31))
    return z


def _as_u64(part):
    a = np.asarray(part)
    if a.dtype == np.uint64:
        return a
    if a.dtype.kind in "iub":
        return a.astype(np.int64).view(np.uint64) if a.dtype.kind == "i" else a.astype(np.uint64)
    raise TypeError(f"hash parts must be integers, got {a.dtype}")


def hash_parts(*parts):
    """Hash a sequence of integer scalars/arrays (broadcast) to uint64."""
    h = np.zeros((), dtype=np.uint64)
    with np.errstate(over="ignore"):
        for p in parts:
            if isinstance(p, (int, np.integer)) and not isinstance(p, bool):
                p = np.uint64(int(p) & _MASK)
            h = mix64(h ^ mix64(_as_u64(p)))
    return h


def uniform(*parts):
    """Uniform(0,1) variates keyed by ``parts``; never exactly 0 or 1."""
    h = hash_parts(*parts)
    return ((h >> np.uint64(11)).astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


def derive_seed(seed, *tags):
    """Child seed for a named sub-stream, as a Python int in [0, 2**64)."""
    return int(hash_parts(int(seed), *(int(t) for t in tags)))


def coord_keys(coords):
    """Row-wise hash of an integer coordinate array of shape (n, d)."""
    coords = np.asarray(coords, dtype=np.int64)
    if coords.ndim == 1:
        coords = coords[:, None]
    h = np.full(coords.shape[0], np.uint64(0x5EED), dtype=np.uint64)
    with np.errstate(over="ignore"):
        for j in range(coords.shape[1]):
            h = mix64(h ^ mix64(coords[:, j].view(np.uint64)))
    return h


def generator(seed, *tags):
    """A numpy Generator on a Philox stream keyed by ``(seed, *tags)``."""
    key = derive_seed(seed, *tags)
    return np.random.Generator(np.random.Philox(key=key))
