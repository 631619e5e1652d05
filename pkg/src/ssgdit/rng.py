"""SplitMix64 pseudo-random stream.

SplitMix64 is used wherever the artifact promises bit-identical synthetic
data across platforms and languages: the generator is three multiplies and
a handful of xor-shifts on 64-bit integers, so any implementation that gets
the masks right produces the same stream.  Floats are derived as
``(z >> 11) * 2**-53`` which yields uniform doubles in [0, 1).
"""

from __future__ import annotations

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_INV_2_53 = 2.0 ** -53


class SplitMix64:
    """Deterministic 64-bit stream with a documented draw order."""

    __slots__ = ("_state",)

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
        return z ^ (z >> 31)

    def next_float(self) -> float:
        """Uniform double in [0, 1)."""
        return (self.next_u64() >> 11) * _INV_2_53

    def next_symmetric(self) -> float:
        """Uniform double in [-1, 1)."""
        return 2.0 * self.next_float() - 1.0

    def next_index(self, n: int) -> int:
        """Integer in [0, n). Modulo reduction; the bias at 2**64 scale is
        irrelevant for the desk-scale draws this feeds."""
        if n <= 0:
            raise ValueError(f"n must be positive, got {n}")
        return self.next_u64() % n

    def floats(self, count: int) -> list[float]:
        return [self.next_float() for _ in range(count)]

    def symmetric(self, count: int) -> list[float]:
        return [self.next_symmetric() for _ in range(count)]
