"""SplitMix64, the seeded generator behind every sampled quantity.

The algorithm is fixed so that sample sequences are reproducible across
platforms and implementations::

    state = (state + 0x9E3779B97F4A7C15) mod 2^64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) mod 2^64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) mod 2^64
    out = z ^ (z >> 31)

Uniform doubles in [0, 1) are ``(out >> 11) * 2^-53``.
"""

from __future__ import annotations

import numpy as np

MASK = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


class SplitMix64:
    def __init__(self, seed: int = 0):
        self.state = int(seed) & MASK

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN) & MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
        return z ^ (z >> 31)

    def random(self, size: int | tuple[int, ...] | None = None):
        """Uniform doubles in [0, 1), filled in C (row-major) order."""
        if size is None:
            return (self.next_u64() >> 11) * 2.0 ** -53
        shape = (size,) if isinstance(size, int) else tuple(size)
        count = int(np.prod(shape)) if shape else 1
        vals = np.fromiter(
            ((self.next_u64() >> 11) for _ in range(count)), dtype=np.float64, count=count
        )
        return (vals * 2.0 ** -53).reshape(shape)

    def uniform(self, low, high, size=None):
        low = np.asarray(low, dtype=float)
        high = np.asarray(high, dtype=float)
        if size is None:
            size = np.broadcast_shapes(low.shape, high.shape)
        return low + (high - low) * self.random(size)
