"""Photometric and geometric augmentation of fine-grained tasks."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class AugmentSpec:
    flip_prob: float = 0.0
    jitter: float = 0.0  # per-channel gain and common brightness offset, uniform in +-jitter
    depth_noise: float = 0.0  # multiplicative, uniform in +-depth_noise

    @property
    def is_identity(self) -> bool:
        return self.flip_prob == 0 and self.jitter == 0 and self.depth_noise == 0


def flip(task):
    return replace(
        task,
        image=task.image[..., ::-1].copy(),
        depth=task.depth[..., ::-1].copy(),
        valid=task.valid[..., ::-1].copy(),
    )


def augment(task, ops: AugmentSpec, rng: np.random.Generator):
    if ops.is_identity:
        return task
    out = task
    if ops.flip_prob > 0 and rng.random() < ops.flip_prob:
        out = flip(out)
    if ops.jitter > 0:
        gain = 1.0 + rng.uniform(-ops.jitter, ops.jitter, size=(3, 1, 1))
        offset = rng.uniform(-ops.jitter, ops.jitter)
        out = replace(out, image=np.clip(out.image * gain + offset, 0.0, 1.0))
    if ops.depth_noise > 0:
        noise = rng.uniform(-ops.depth_noise, ops.depth_noise, size=out.depth.shape)
        noisy = np.maximum(out.depth * (1.0 + noise), 1e-6)
        out = replace(out, depth=np.where(out.valid, noisy, out.depth))
    return out
