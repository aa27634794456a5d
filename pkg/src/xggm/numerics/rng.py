"""Seeded random streams.

A stream is identified by ``(seed, stream)``; numpy's ``SeedSequence`` hashes
the pair into PCG64 state, so independent substreams (per branch, per worker)
never overlap and are reproducible across runs and platforms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ParameterError


@dataclass(frozen=True)
class RngState:
    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
        return np.random.Generator(np.random.PCG64(seq))

    def child(self, stream: int) -> "RngState":
        # nested substreams keep the parent's id in the high bits
        return RngState(self.seed, (self.stream << 16) + stream + 1)


def as_generator(rng) -> np.random.Generator:
    """Accept an :class:`RngState` (fresh stream) or a live ``Generator``."""
    if isinstance(rng, RngState):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngState or numpy Generator, got {type(rng).__name__}")


def gaussian(rng, shape, mean: float = 0.0, sigma: float = 1.0) -> np.ndarray:
    if sigma < 0:
        raise ParameterError(f"sigma must be >= 0, got {sigma}")
    z = as_generator(rng).standard_normal(shape)
    return mean + sigma * z


def gaussian_matrix(rng, rows: int, cols: int, mean: float = 0.0, sigma: float = 1.0) -> np.ndarray:
    return gaussian(rng, (rows, cols), mean, sigma)


def uniform(rng) -> float:
    """One draw from the half-open interval [0, 1)."""
    return float(as_generator(rng).random())
