"""Seeded random streams (PCG64 behind numpy's SeedSequence).

``Rng.child(*key)`` derives an independent stream from the root seed and a
key path, so per-sample or per-epoch streams do not depend on call order.
"""
from __future__ import annotations

import numpy as np


class Rng:
    algorithm = "PCG64"

    def __init__(self, seed: int = 0, _key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.key = tuple(int(k) for k in _key)
        ss = np.random.SeedSequence(self.seed & 0xFFFFFFFFFFFFFFFF, spawn_key=self.key)
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def child(self, *key: int) -> "Rng":
        return Rng(self.seed, self.key + tuple(key))

    def spawn(self, n: int) -> list["Rng"]:
        return [self.child(i) for i in range(n)]

    def random(self, shape=None) -> np.ndarray:
        return self._gen.random(shape)

    def uniform(self, low=0.0, high=1.0, shape=None):
        return self._gen.uniform(low, high, shape)

    def normal(self, loc=0.0, scale=1.0, shape=None):
        return self._gen.normal(loc, scale, shape)

    def integers(self, low, high=None, shape=None):
        return self._gen.integers(low, high, shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def __repr__(self):
        return f"Rng(seed={self.seed}, key={self.key})"
