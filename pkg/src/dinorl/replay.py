"""Fixed-capacity experience replay with uniform sampling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

from .errors import InsufficientDataError
from .prng import SplitMix64


@dataclass(frozen=True)
class Transition:
    obs: Any
    action: int
    reward: float
    next_obs: Any
    terminal: bool
    next_action: int | None = None


class ReplayBuffer:
    """Ring buffer; once full, each push overwrites the oldest record."""

    def __init__(self, capacity: int = 50_000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: list = [None] * capacity
        self._cursor = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def push(self, t: Transition) -> None:
        self._items[self._cursor] = t
        self._cursor = (self._cursor + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def contents(self) -> list:
        """Stored records, oldest first."""
        if self._size < self.capacity:
            return self._items[:self._size]
        return self._items[self._cursor:] + self._items[:self._cursor]

    def sample_indices(self, batch_size: int, prng: SplitMix64) -> list[int]:
        if self._size < batch_size:
            raise InsufficientDataError(
                f"replay holds {self._size} transitions, need {batch_size} to sample")
        return [prng.below(self._size) for _ in range(batch_size)]

    def sample(self, batch_size: int, prng: SplitMix64) -> list:
        """Draw ``batch_size`` records uniformly, with replacement, in draw order."""
        return [self._items[i] for i in self.sample_indices(batch_size, prng)]
