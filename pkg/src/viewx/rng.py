"""Deterministic noise streams for repeatable sampling runs.

Built on numpy's Philox4x64-10 counter-based bit generator, keyed directly by
the 64-bit seed (no entropy-pool mixing), so a given (seed, draw order) pair
produces the same bits on every platform. Consumers draw strictly in call
order; independent child streams come from counter jumps of 2**128 blocks and
never overlap the parent.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError

_MAX_SEED = 2**64


class NoiseStream:
    """Seeded, splittable stream of standard-normal draws."""

    def __init__(self, seed: int, _bitgen=None):
        seed = int(seed)
        if not 0 <= seed < _MAX_SEED:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        if _bitgen is None:
            _bitgen = np.random.Philox(key=seed)
        self._gen = np.random.Generator(_bitgen)

    def standard_normal(self, shape, dtype=np.float32) -> np.ndarray:
        return self._gen.standard_normal(shape, dtype=dtype)

    def uniform_u64(self) -> int:
        """One 64-bit draw, e.g. for deriving a child seed to record."""
        return int(self._gen.integers(0, _MAX_SEED, dtype=np.uint64))

    def split(self, n: int) -> list["NoiseStream"]:
        """Derive ``n`` streams independent of this one and of each other.

        Child ``i`` starts at counter block ``(i + 1) * 2**128`` of the same
        key, so parent and children stay disjoint for any realistic draw
        count. The parent's own sequence is not advanced.
        """
        if n < 1:
            raise ConfigError("split count must be >= 1")
        return [
            NoiseStream(self.seed, _bitgen=np.random.Philox(key=self.seed).jumped(i + 1))
            for i in range(n)
        ]
