from dataclasses import dataclass
from typing import Tuple

import numpy as np

# Substream tags, so unrelated consumers of one seed never share draws
STREAM_SAMPLING = 1
STREAM_WALKS = 2
STREAM_PROBLEM = 3
STREAM_TRAINING = 4
STREAM_PROBES = 5


@dataclass(frozen=True)
class Rng:
    """
    Seeded, splittable random stream.

    Identical (seed, key) pairs always yield identical generators; children
    derived with different keys are statistically independent.
    """
    seed: int
    key: Tuple[int, ...] = ()

    def child(self, *key: int) -> "Rng":
        return Rng(self.seed, self.key + tuple(int(k) for k in key))

    def generator(self) -> np.random.Generator:
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=self.key)
        return np.random.Generator(np.random.PCG64(sequence))
