"""Portable seeded random streams.

Bits come from numpy's PCG64 (PCG-XSL-RR 128/64) bit generator; every derived
draw (uniform reals, integers, Box-Muller normals) is computed here from its
53-bit uniform doubles, so a given seed yields the same sequence on every
platform and numpy version that ships PCG64.
"""

import numpy as np

PRNG_IDENTITY = "PCG64 (numpy.random.PCG64) / 53-bit uniforms / Box-Muller normals"


class PortableRandom:
    def __init__(self, seed: int):
        self.seed = int(seed)
        self._bits = np.random.Generator(np.random.PCG64(self.seed))

    def random(self, size=None) -> np.ndarray | float:
        """Uniform doubles in [0, 1)"""
        return self._bits.random(size)

    def uniform(self, low: float, high: float, size=None):
        return low + (high - low) * self.random(size)

    def integers(self, low: int, high: int, size=None):
        """Uniform integers in the closed range [low, high]"""
        span = high - low + 1
        draws = np.floor(self.random(size) * span).astype(np.int64)
        return low + np.minimum(draws, span - 1)

    def normal(self, mean: float = 0.0, std: float = 1.0, size=None):
        count = 1 if size is None else int(np.prod(size))
        pairs = (count + 1) // 2
        u1 = self.random(pairs)
        u2 = self.random(pairs)
        # 1 - u keeps the log argument in (0, 1]
        radius = np.sqrt(-2.0 * np.log1p(-u1))
        angle = 2.0 * np.pi * u2
        samples = np.empty(2 * pairs)
        samples[0::2] = radius * np.cos(angle)
        samples[1::2] = radius * np.sin(angle)
        samples = mean + std * samples[:count]
        if size is None:
            return float(samples[0])
        return samples.reshape(size)
