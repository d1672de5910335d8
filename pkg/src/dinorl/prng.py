"""SplitMix64 generator shared by the simulator, the network initializer and the agents.

Everything random in the package flows through this one recurrence so that runs are
reproducible bit-for-bit across platforms.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def prng_next(state: int) -> tuple[int, int]:
    """Advance a SplitMix64 state once. Returns ``(value, next_state)``."""
    state = (state + GOLDEN_GAMMA) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * _MIX1) & MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & MASK64
    return z ^ (z >> 31), state


class SplitMix64:
    """Mutable convenience wrapper around :func:`prng_next`."""

    def __init__(self, state: int = 0):
        self.state = state & MASK64

    def next(self) -> int:
        value, self.state = prng_next(self.state)
        return value

    def below(self, n: int) -> int:
        """Draw ``next() mod n``."""
        return self.next() % n

    def uniform(self) -> float:
        """Draw ``next() / 2**64`` in [0, 1)."""
        return self.next() / 18446744073709551616.0

    def uniform_array(self, n: int) -> np.ndarray:
        """Draw ``n`` consecutive values mapped to [0, 1) as float64.

        Equivalent to ``n`` calls of :meth:`next` (the state advances by a constant per
        draw, so the whole block can be mixed at once).
        """
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * np.uint64(GOLDEN_GAMMA)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * GOLDEN_GAMMA) & MASK64
        # top 53 bits give an exactly representable double in [0, 1)
        return (z >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
