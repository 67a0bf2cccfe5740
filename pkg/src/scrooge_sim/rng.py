"""Labelled random streams.

Every stochastic consumer draws from its own Philox stream whose key is a
hash of ``(seed, label, index)``. Adding a consumer with a new label never
shifts the numbers seen by existing consumers, and trials can be run in any
order or in parallel.
"""
from __future__ import annotations

import hashlib

import numpy as np

SEED_MASK = (1 << 64) - 1


def stream_key(seed: int, label: str, index: int = 0) -> int:
    digest = hashlib.blake2b(
        f"{seed & SEED_MASK}:{label}:{index}".encode(), digest_size=16
    ).digest()
    return int.from_bytes(digest, "little")


def make_stream(seed: int, label: str, index: int = 0) -> np.random.Generator:
    """Return an independent generator for ``(seed, label, index)``."""
    return np.random.Generator(np.random.Philox(key=stream_key(seed, label, index)))


class Streams:
    """Lazily created named streams bound to one seed and one owner index.

    >>> s = Streams(7, owner="trial", index=3)
    >>> a = s.get("failure").random()
    >>> b = Streams(7, owner="trial", index=3).get("failure").random()
    >>> a == b
    True
    """

    def __init__(self, seed: int, owner: str = "instance", index: int = 0):
        self.seed = int(seed)
        self.owner = owner
        self.index = int(index)
        self._cache: dict[str, np.random.Generator] = {}

    def get(self, label: str) -> np.random.Generator:
        gen = self._cache.get(label)
        if gen is None:
            gen = make_stream(self.seed, f"{self.owner}/{label}", self.index)
            self._cache[label] = gen
        return gen
