"""Counter-based, splittable random streams.

A :class:`Stream` is a value: a master seed plus a path of child indices.
Its generator is a Philox bit generator whose key is derived from the seed
and all but the last path element, and whose counter starts at a block
selected by the last path element. Replicate ``r`` of a run therefore sees
the same numbers no matter which thread evaluates it or in what order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class Stream:
    seed: int
    path: tuple[int, ...] = ()

    def __post_init__(self):
        if self.seed < 0 or any(i < 0 for i in self.path):
            raise ValueError("seed and stream indices must be non-negative")

    def substream(self, index: int) -> "Stream":
        return Stream(self.seed, self.path + (int(index),))

    def generator(self) -> np.random.Generator:
        prefix = self.path[:-1]
        key = np.random.SeedSequence([self.seed, len(prefix), *prefix]).generate_state(2, np.uint64)
        last = self.path[-1] if self.path else 0
        # words 0-1 advance while drawing; words 2-3 select the block
        counter = np.array([0, 0, last & _MASK64, (last >> 64) & _MASK64], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key, counter=counter))


def replicate_generator(seed: int, replicate: int) -> np.random.Generator:
    return Stream(seed).substream(replicate).generator()
