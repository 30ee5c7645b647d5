"""Seeded, splittable random streams.

Every random draw in a run comes from a Philox counter-based generator keyed
by ``(seed, path...)``, so a stream depends only on its position in the run
(sample index, coordinate, purpose) and never on evaluation order or worker
count.
"""

from __future__ import annotations

import numpy as np

# stream purposes, used as the last element of a key path
LAYERS = 0
PROPOSAL = 1


def stream(seed: int, *path: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(p) for p in path))
    return np.random.Generator(np.random.Philox(ss))
