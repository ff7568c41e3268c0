"""Portable seeded random streams.

All stochastic steps in the package draw from :class:`Xoshiro256`, a
xoshiro256** generator whose 256-bit state is filled from a SplitMix64
sequence.  The algorithm is written out in full (see ``docs/PRNG.md``) so
traces can be regenerated bit-for-bit by any other implementation.

Derived streams: observation ``i`` of a batch seeded with ``master`` uses
``derive_seed(master, i)``; this keeps results independent of how the batch
is scheduled across workers.
"""

from __future__ import annotations

import math

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a SplitMix64 state; returns ``(new_state, output)``."""
    state = (state + GOLDEN_GAMMA) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def derive_seed(master: int, index: int) -> int:
    """Seed for sub-stream ``index`` of ``master`` (both taken mod 2**64)."""
    state = (master + (index + 1) * GOLDEN_GAMMA) & MASK64
    _, out = splitmix64(state)
    return out


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class Xoshiro256:
    """xoshiro256** 1.0 with SplitMix64 seeding."""

    def __init__(self, seed: int):
        self.seed = seed & MASK64
        sm = self.seed
        s = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            s.append(out)
        self._s = s

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def random(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def below(self, n: int) -> int:
        """Unbiased integer in [0, n) by Lemire's multiply-shift with rejection."""
        if n <= 0:
            raise ValueError("bound must be positive")
        m = self.next_u64() * n
        low = m & MASK64
        if low < n:
            threshold = ((1 << 64) - n) % n
            while low < threshold:
                m = self.next_u64() * n
                low = m & MASK64
        return m >> 64

    def poisson(self, mean: float) -> int:
        """Poisson variate by sequential inversion; large means are split."""
        if mean < 0 or not math.isfinite(mean):
            raise ValueError("Poisson mean must be finite and non-negative")
        if mean == 0:
            return 0
        # exp(-mean) underflows past ~745; split into equal chunks
        chunks = max(1, math.ceil(mean / 500.0))
        part = mean / chunks
        total = 0
        for _ in range(chunks):
            u = self.random()
            p = math.exp(-part)
            cdf = p
            k = 0
            while u > cdf:
                k += 1
                p *= part / k
                cdf += p
                if p == 0.0:
                    break
            total += k
        return total

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates, walking from the end."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]
