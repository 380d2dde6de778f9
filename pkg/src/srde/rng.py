"""Seedable SplitMix64 generator used everywhere reproducibility matters.

A tiny fixed-algorithm generator keeps sampled pixel sets, weight
initialization, and tuner initialization identical across platforms and
numpy versions.
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


class Rng:
    """SplitMix64: identical seed, identical stream."""

    algorithm = "splitmix64"

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def next_float(self) -> float:
        """Uniform in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.next_float()

    def next_below(self, n: int) -> int:
        """Uniform integer in [0, n). Fixed-point multiply, no rejection."""
        if n <= 0:
            raise ValueError("n must be positive")
        return (self.next_u64() * n) >> 64

    def sample_without_replacement(self, n: int, m: int) -> list[int]:
        """m distinct indices from range(n), order given by a partial shuffle."""
        if m > n:
            raise ValueError(f"cannot draw {m} distinct values from range({n})")
        pool = list(range(n))
        out = []
        for i in range(m):
            j = i + self.next_below(n - i)
            pool[i], pool[j] = pool[j], pool[i]
            out.append(pool[i])
        return out
