"""Counter-based Gaussian noise streams.

Every (seed, stream, step) triple owns an independent Philox stream whose
counter block is fixed by the step index, so the noise used at step ``k``
does not depend on how many steps or draws happened before.  Within a step,
particle ``i`` reads rows ``i`` of a row-major ``(N, d)`` fill; a fill of
``N_ref >= N`` rows reproduces the ``N``-row fill as its prefix, which is
what shared-noise coupling relies on.
"""
from __future__ import annotations

import numpy as np

_INIT = 0
_STEP = 1
_AUX = 2


def _key(seed: int, stream: int, purpose: int) -> np.ndarray:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream), purpose))
    return ss.generate_state(2, dtype=np.uint64)


def _generator(seed: int, stream: int, purpose: int, block: int) -> np.random.Generator:
    counter = np.array([0, 0, block, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=_key(seed, stream, purpose), counter=counter))


class NoiseStream:
    """Deterministic standard-normal draws indexed by (step, particle)."""

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)

    def step_normals(self, step: int, n: int, d: int) -> np.ndarray:
        return _generator(self.seed, self.stream, _STEP, step).standard_normal((n, d))

    def init_normals(self, n: int, d: int) -> np.ndarray:
        return _generator(self.seed, self.stream, _INIT, 0).standard_normal((n, d))

    def generator(self, block: int = 0) -> np.random.Generator:
        """An auxiliary generator (Monte-Carlo trials, resampling) for ``block``."""
        return _generator(self.seed, self.stream, _AUX, block)


def generator(seed: int, block: int = 0) -> np.random.Generator:
    return NoiseStream(seed).generator(block)
