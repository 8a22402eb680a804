"""
Counter-based seeded random streams.

Every stream is a Philox generator keyed by a SeedSequence built from the root
seed plus an integer path, so dataset ``k`` of a batch is a pure function of
``(seed, k)`` regardless of generation order or thread placement.
"""
from typing import Tuple

import numpy as np


def derive_seed(seed: int, *stream: int) -> int:
    """Collapse a (seed, stream path) pair into one 63-bit integer seed."""
    state = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *map(int, stream)]).generate_state(
        1, dtype=np.uint64
    )
    return int(state[0] >> np.uint64(1))


class SeededRng:
    """Deterministic random stream identified by ``(seed, stream)``."""

    def __init__(self, seed: int, stream: Tuple[int, ...] = ()):
        self.seed = int(seed)
        self.stream = tuple(int(s) for s in stream)
        entropy = [self.seed & 0xFFFFFFFFFFFFFFFF, *self.stream]
        self._generator = np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))

    def child(self, *stream: int) -> "SeededRng":
        """Independent sub-stream; does not advance this stream."""
        return SeededRng(self.seed, self.stream + tuple(stream))

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None) -> np.ndarray:
        return self._generator.uniform(low, high, size)

    def normal(self, size=None) -> np.ndarray:
        return self._generator.standard_normal(size)

    def integers(self, low: int, high: int, size=None):
        """Integers in ``[low, high)``."""
        return self._generator.integers(low, high, size=size)

    def choice(self, n: int) -> int:
        return int(self._generator.integers(0, n))

    def permutation(self, n: int) -> np.ndarray:
        return self._generator.permutation(n)

    def __repr__(self) -> str:
        return f"SeededRng(seed={self.seed}, stream={self.stream})"
