"""Counter-based random streams derived from one master seed.

Every consumer draws from ``default_rng([seed, tag, *counters])`` with a fixed
per-purpose tag, so streams never overlap and ablations that share a seed also
share data order.
"""

import numpy as np

STREAM_TAGS = {
    "scene": 0,  # counters: scene_id
    "meta_sampler": 1,
    "sampler": 2,
    "augment": 3,
    "init": 4,
    "frame": 5,  # counters: scene_id, frame_id
}


def stream(seed: int, name: str, *counters: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), STREAM_TAGS[name], *(int(c) for c in counters)])
