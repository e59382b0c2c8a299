"""Deterministic named substreams derived from one root seed.

Every stochastic component draws from ``substream(seed, name)`` so that fixing
the root seed reproduces the whole pipeline while components stay independent.
"""

from __future__ import annotations

import hashlib

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    digest = hashlib.sha256(name.encode("utf-8")).digest()
    words = tuple(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4))
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=words))
