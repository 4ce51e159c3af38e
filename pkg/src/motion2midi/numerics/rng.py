"""Seeded random streams.

Every stream is a numpy ``PCG64`` generator keyed by ``SeedSequence`` entropy
``[seed, *keys]``.  Keys derive independent child streams (one per sample,
per training step, ...) so no stream's state depends on how many draws another
stream made.  Both algorithms are fixed by numpy's compatibility policy.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    entropy = [int(seed) & _MASK64] + [int(k) & _MASK64 for k in keys]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
