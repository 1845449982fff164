"""Seeded, splittable random streams."""

from __future__ import annotations

import math

import numpy as np

from cdstraj.numerics.tensor import ContractViolation, Tensor


class Rng:
    """
    Counter-based random stream keyed by ``(seed, path)``.

    ``split(key)`` derives an independent child stream without consuming the
    parent, so results depend only on the key path, never on call order.
    Philox bit streams and float conversion are platform independent.
    """

    def __init__(self, seed: int, path: tuple[int, ...] = ()) -> None:
        if seed < 0 or any(key < 0 for key in path):
            raise ContractViolation(f"seed and split keys must be non-negative, got {seed}, {path}")
        self.seed = seed
        self.path = path
        sequence = np.random.SeedSequence(entropy=seed, spawn_key=path)
        self._gen = np.random.Generator(np.random.Philox(sequence))

    def split(self, key: int) -> Rng:
        return Rng(self.seed, (*self.path, key))

    def random(self, shape: tuple[int, ...] = ()) -> np.ndarray:
        """Uniform draws in [0, 1)."""
        return np.asarray(self._gen.random(shape))

    def uniform(self, low: float, high: float, shape: tuple[int, ...] = ()) -> np.ndarray:
        return low + (high - low) * self.random(shape)

    def integers(self, low: int, high: int, shape: tuple[int, ...] = ()) -> np.ndarray:
        """Integers in [low, high)."""
        return np.asarray(self._gen.integers(low, high, size=shape))

    def permutation(self, n: int) -> np.ndarray:
        return np.asarray(self._gen.permutation(n))

    def choice(self, probs: np.ndarray) -> int:
        """Index drawn from the categorical distribution ``probs``."""
        probs = np.asarray(probs, dtype=np.float64)
        if probs.ndim != 1 or np.any(probs < 0) or not np.isclose(probs.sum(), 1.0):
            raise ContractViolation(f"choice needs a probability vector, got {probs}")
        index = int(np.searchsorted(np.cumsum(probs), self.random(), side="right"))
        return min(index, probs.size - 1)

    def standard_normal(self, shape: tuple[int, ...]) -> np.ndarray:
        """Box-Muller transform of the uniform stream."""
        count = int(np.prod(shape)) if shape else 1
        pairs = math.ceil(count / 2)
        u1 = 1.0 - self.random((pairs,))
        u2 = self.random((pairs,))
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * np.pi * u2
        normals = np.empty(2 * pairs)
        normals[0::2] = radius * np.cos(angle)
        normals[1::2] = radius * np.sin(angle)
        return normals[:count].reshape(shape)


def sample_standard_normal(rng: Rng, shape: tuple[int, ...]) -> Tensor:
    return Tensor(rng.standard_normal(shape))
