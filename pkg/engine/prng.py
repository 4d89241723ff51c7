"""
SplitMix64 pseudo random generator.

Every stochastic step in the toolkit (synthetic scenes, k-means++ seeding,
pseudo-view sampling, camera picks) draws from this generator so runs are
reproducible across platforms and across implementations.
"""

import math
from typing import Sequence

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB
MASK64 = (1 << 64) - 1

_GAMMA = np.uint64(GAMMA)
_MIX1 = np.uint64(MIX1)
_MIX2 = np.uint64(MIX2)


def mix64(z: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer applied elementwise to a uint64 array"""
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    """64-bit SplitMix generator

    Draws are vectorized: the i-th output of a batch is mix64(state + (i+1)*GAMMA),
    exactly the sequence a scalar implementation produces.
    """

    def __init__(self, seed: int = 0):
        self.state = int(seed) & MASK64

    def next_uint64(self, n: int) -> np.ndarray:
        if n <= 0:
            return np.zeros(0, dtype=np.uint64)
        steps = np.arange(1, n + 1, dtype=np.uint64)
        counters = np.uint64(self.state) + steps * _GAMMA
        self.state = (self.state + n * GAMMA) & MASK64
        return mix64(counters)

    def uniform(self, n: int) -> np.ndarray:
        """n doubles in [0, 1)"""
        z = self.next_uint64(n)
        return (z >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)

    def uniform_range(self, low, high, shape) -> np.ndarray:
        count = int(np.prod(shape)) if len(shape) else 1
        u = self.uniform(count).reshape(shape)
        return low + u * (high - low)

    def normal(self, n: int) -> np.ndarray:
        """n standard normals, Box-Muller cos branch, two uniforms per draw"""
        u = self.uniform(2 * n).reshape(n, 2) if n > 0 else np.zeros((0, 2))
        u1 = 1.0 - u[:, 0]
        u2 = u[:, 1]
        return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * math.pi * u2)

    def randint(self, n: int) -> int:
        """One integer uniformly in [0, n)"""
        return min(int(self.uniform(1)[0] * n), n - 1)

    def choice_weighted(self, weights: Sequence[float]) -> int:
        """Inverse-CDF categorical draw; zero total falls back to index 0"""
        cdf = np.cumsum(np.asarray(weights, dtype=np.float64))
        total = cdf[-1]
        if not total > 0:
            return 0
        target = self.uniform(1)[0] * total
        idx = int(np.searchsorted(cdf, target, side="right"))
        return min(idx, len(cdf) - 1)
