"""Counter-based random streams.

Each stream is addressed by integer coordinates (e.g. ``(step, stage)``) so
that Gumbel noise for a given training step can be regenerated exactly,
independent of how many draws happened before it.
"""
from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


class Rng:
    def __init__(self, seed: int) -> None:
        self.seed = int(seed) & _MASK64

    def stream(self, *coords: int) -> np.random.Generator:
        if len(coords) > 3:
            raise ValueError("at most 3 coordinates address a stream")
        # word 0 of the counter is left for the generator's own draws
        counter = [0] + [int(c) & _MASK64 for c in coords] + [0] * (3 - len(coords))
        bitgen = np.random.Philox(key=[self.seed, len(coords)], counter=counter)
        return np.random.Generator(bitgen)

    def uniform(self, shape, *coords: int) -> np.ndarray:
        return self.stream(*coords).random(shape)

    def normal(self, shape, *coords: int) -> np.ndarray:
        return self.stream(*coords).standard_normal(shape)

    def gumbel(self, shape, *coords: int) -> np.ndarray:
        u = self.uniform(shape, *coords)
        u = np.clip(u, 1e-12, 1.0 - 1e-12)
        return -np.log(-np.log(u))

    def spawn(self, *coords: int) -> "Rng":
        """Derive an independent child seed from ``coords``."""
        return Rng(int(self.stream(*coords).integers(0, 2**63)))

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed})"
