"""Deterministic derivation of random generators from one master seed.

Every stochastic step receives its own ``numpy.random.Generator`` derived from
``(master seed, purpose, index...)``. Two runs with the same master seed draw
identical streams no matter how work is split across processes.
"""

from __future__ import annotations

import zlib

import numpy as np

_PURPOSES: dict[str, int] = {}


def _purpose_key(purpose: str) -> int:
    # stable across interpreter runs
    if purpose not in _PURPOSES:
        _PURPOSES[purpose] = zlib.crc32(purpose.encode("utf-8"))
    return _PURPOSES[purpose]


def derive_rng(seed: int, purpose: str, *indices: int) -> np.random.Generator:
    """Return a generator for ``purpose`` (and optional indices) under ``seed``.

    Example:
        rng = derive_rng(1234, "submodel", 7)
    """
    sequence = np.random.SeedSequence(
        entropy=seed,
        spawn_key=(_purpose_key(purpose), *indices),
    )
    return np.random.default_rng(sequence)


def child_seed(rng: np.random.Generator) -> int:
    """Draw a 31-bit integer seed for libraries that only accept ints."""
    return int(rng.integers(0, 2**31 - 1))
