"""Deterministic random streams.

Every stochastic routine draws from ``stream(seed, component, index)``
so that runs are reproducible across processes and platforms.  The
component name is hashed with sha256 because Python's builtin hash is
salted per process.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream(seed: int, component: str, index: int = 0) -> np.random.Generator:
    digest = hashlib.sha256(component.encode()).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    ss = np.random.SeedSequence([seed & 0xFFFFFFFF, *words, index])
    return np.random.default_rng(ss)
