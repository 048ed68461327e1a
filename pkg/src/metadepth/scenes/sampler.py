"""Minibatches of fine-grained tasks."""

from __future__ import annotations

import numpy as np

from metadepth.errors import ConfigurationError


def sample_fine_grained_batch(ds, K: int, rng) -> list:
    """Draw K distinct tasks from ``ds`` without replacement."""
    if K < 1 or K > len(ds):
        raise ConfigurationError(f"cannot draw {K} tasks from a dataset of {len(ds)}")
    idx = rng.choice(len(ds), size=K, replace=False)
    return [ds.pairs[i] for i in idx]


class EpochSampler:
    """Epoch-shuffled partition of dataset indices into batches of K.

    Each epoch draws a fresh permutation and yields ``len(ds) // K`` batches;
    the remainder of the permutation is dropped for that epoch.
    """

    def __init__(self, size: int, K: int, rng: np.random.Generator):
        if K < 1 or K > size:
            raise ConfigurationError(f"batch size {K} incompatible with dataset of {size}")
        self.size = size
        self.K = K
        self.rng = rng

    @property
    def batches_per_epoch(self) -> int:
        return self.size // self.K

    def epoch(self):
        perm = self.rng.permutation(self.size)
        for t in range(self.batches_per_epoch):
            yield perm[t * self.K : (t + 1) * self.K]

    def take(self, n_batches: int):
        """Batches from consecutive epochs, ``n_batches`` in total."""
        out = []
        while len(out) < n_batches:
            for b in self.epoch():
                out.append(b)
                if len(out) == n_batches:
                    break
        return out
