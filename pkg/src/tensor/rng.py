"""Deterministic splittable random streams.

Backed by numpy's Philox counter-based bit generator; a stream is addressed by
``(seed, path)`` where ``path`` is the tuple of child ids used to reach it, so
two generators built from equal addresses emit identical draws.
"""
from __future__ import annotations

from typing import Sequence, Tuple

import numpy as np

from ..errors import ArgumentError


class Rng:
    def __init__(self, seed: int, stream: int | Sequence[int] = 0):
        if seed < 0:
            raise ArgumentError(f"Seed must be non-negative, got {seed}")
        path = (int(stream),) if isinstance(stream, (int, np.integer)) else tuple(int(s) for s in stream)
        self.seed = int(seed)
        self.path: Tuple[int, ...] = path
        sequence = np.random.SeedSequence(self.seed, spawn_key=self.path)
        self._gen = np.random.Generator(np.random.Philox(sequence))

    @property
    def stream(self) -> Tuple[int, ...]:
        return self.path

    def child(self, *ids: int) -> "Rng":
        """Independent generator for a sub-stream (sample index, epoch, worker...)."""
        return Rng(self.seed, self.path + tuple(int(i) for i in ids))

    def uniform(self, shape=()) -> np.ndarray:
        """Draws in the half-open interval [0, 1)."""
        return self._gen.random(shape)

    def normal(self, shape=(), std: float = 1.0) -> np.ndarray:
        return self._gen.normal(0.0, std, shape)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def choice(self, n: int, k: int) -> np.ndarray:
        """``k`` distinct indices from ``range(n)``, uniform without replacement."""
        if not 0 <= k <= n:
            raise ArgumentError(f"Cannot choose {k} of {n} without replacement")
        return self._gen.choice(n, size=k, replace=False)

    def gumbel(self, shape, eps: float = 1e-10) -> np.ndarray:
        """g = -log(-log(u + eps) + eps) with u ~ Uniform[0, 1)."""
        u = self.uniform(shape)
        return -np.log(-np.log(u + eps) + eps)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, stream={self.path})"
