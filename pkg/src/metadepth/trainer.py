"""Supervised depth training from an arbitrary initialization."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from metadepth.errors import ConfigurationError, NumericError
from metadepth.numerics import tensor as T
from metadepth.numerics.network import Network, NetworkSpec, backward, l2_loss
from metadepth.numerics.optim import AdamWState, adamw_step
from metadepth.numerics.params import ParamVector
from metadepth.scenes.augment import AugmentSpec, augment
from metadepth.scenes.sampler import EpochSampler
from metadepth.seeding import stream

LOSS_TARGETS = ("depth", "inverse_depth")


def _check_range(d_min, d_max):
    if not (0 < d_min < d_max):
        raise ConfigurationError(f"depth range must satisfy 0 < d_min < d_max, got ({d_min}, {d_max})")


def sigmoid_to_depth(s, d_min: float, d_max: float):
    """Map sigmoid output to metric depth through a linear inverse-depth range.

    Works on numpy arrays and on autodiff tensors.
    """
    _check_range(d_min, d_max)
    lo, hi = 1.0 / d_max, 1.0 / d_min
    if isinstance(s, T.Tensor):
        return T.reciprocal(T.affine(s, hi - lo, lo))
    return 1.0 / (lo + np.asarray(s) * (hi - lo))


def sigmoid_to_disparity(s, d_min: float, d_max: float):
    lo, hi = 1.0 / d_max, 1.0 / d_min
    if isinstance(s, T.Tensor):
        return T.affine(s, hi - lo, lo)
    return lo + np.asarray(s) * (hi - lo)


def depth_to_sigmoid(depth, d_min: float, d_max: float):
    _check_range(d_min, d_max)
    lo, hi = 1.0 / d_max, 1.0 / d_min
    return (1.0 / np.asarray(depth) - lo) / (hi - lo)


def batch_objective(net: Network, params: ParamVector, images, depths, valid, depth_range, target="depth"):
    """Forward pass and loss node for one batch."""
    out = net.forward(params, images)
    if target == "depth":
        pred = sigmoid_to_depth(out, *depth_range)
        return l2_loss(pred, depths, valid)
    if target == "inverse_depth":
        pred = sigmoid_to_disparity(out, *depth_range)
        inv = np.where(valid, 1.0 / np.where(valid, depths, 1.0), 0.0)
        return l2_loss(pred, inv, valid)
    raise ConfigurationError(f"unknown loss target {target!r}")


def loss_and_grad(net, params, batch, depth_range, target="depth", context=None):
    """Return ``(loss, grad)`` on ``batch = (images, depths, valid)``."""
    try:
        loss = batch_objective(net, params, *batch, depth_range, target)
        grad = backward(net, params, loss)
    except NumericError as exc:
        raise NumericError(str(exc), **(context or {})) from exc
    return float(loss.data), grad


@dataclass(frozen=True)
class SupervisedConfig:
    epochs: int = 15
    lr: float = 3e-4
    weight_decay: float = 0.01
    batch_size: int = 8
    depth_range: tuple = (0.3, 10.0)
    seed: int = 0
    loss_target: str = "depth"
    steps: int | None = None  # overrides epochs with an explicit step count

    def __post_init__(self):
        object.__setattr__(self, "depth_range", tuple(float(v) for v in self.depth_range))

    def validate(self):
        _check_range(*self.depth_range)
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ConfigurationError("epochs >= 0, batch_size >= 1 and lr > 0 are required")
        if self.loss_target not in LOSS_TARGETS:
            raise ConfigurationError(f"loss_target must be one of {LOSS_TARGETS}")
        if self.steps is not None and self.steps < 0:
            raise ConfigurationError("steps must be non-negative")

    def to_dict(self):
        d = asdict(self)
        d["depth_range"] = list(self.depth_range)
        return d

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown stage2 keys: {sorted(unknown)}")
        return cls(**d)


REFERENCE_SUPERVISED = SupervisedConfig(epochs=15, lr=3e-4, weight_decay=0.01)


@dataclass
class TrainedModel:
    theta_star: ParamVector
    spec: NetworkSpec
    depth_range: tuple
    provenance: dict = field(default_factory=dict)
    loss_trace: list = field(default_factory=list)  # (epoch, iter, loss)

    def network(self) -> Network:
        return Network(self.spec)


def _batch(ds, idx, aug, rng):
    if aug is None or aug.is_identity:
        return ds.stack(idx)
    tasks = [augment(ds.pairs[i], aug, rng) for i in idx]
    return np.stack([t.image for t in tasks]), np.stack([t.depth for t in tasks]), np.stack([t.valid for t in tasks])


def run_supervised(
    theta_init: ParamVector,
    ds,
    net: Network,
    cfg: SupervisedConfig,
    augment_spec: AugmentSpec | None = None,
    provenance: dict | None = None,
) -> TrainedModel:
    """AdamW minimisation of the L2 depth loss starting from ``theta_init``."""
    cfg.validate()
    rng = stream(cfg.seed, "sampler")
    aug_rng = stream(cfg.seed, "augment")
    sampler = EpochSampler(len(ds), min(cfg.batch_size, len(ds)), rng)
    params = theta_init.copy()
    state = AdamWState.init(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    trace = []
    total = cfg.steps if cfg.steps is not None else cfg.epochs * sampler.batches_per_epoch
    step, epoch = 0, 0
    start = time.perf_counter()
    while step < total:
        for it, idx in enumerate(sampler.epoch()):
            if step >= total:
                break
            batch = _batch(ds, idx, augment_spec, aug_rng)
            loss, grad = loss_and_grad(
                net, params, batch, cfg.depth_range, cfg.loss_target, {"epoch": epoch, "iteration": it}
            )
            state, params = adamw_step(state, params, grad)
            trace.append((epoch, it, loss))
            step += 1
        epoch += 1
    prov = {"stage2": cfg.to_dict(), "wallclock_s": time.perf_counter() - start}
    prov.update(provenance or {})
    return TrainedModel(params, net.spec, cfg.depth_range, prov, trace)


def predict_depth(model: TrainedModel, image, net: Network | None = None) -> np.ndarray:
    """Metric depth for one image ``(3, H, W)`` or a batch ``(B, 3, H, W)``."""
    image = np.asarray(image)
    single = image.ndim == 3
    batch = image[None] if single else image
    net = net or model.network()
    out = net.forward(model.theta_star, batch).data.astype(np.float64)
    depth = sigmoid_to_depth(out, *model.depth_range)
    return depth[0] if single else depth


def smoothed(values, window: int = 10) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if len(values) == 0:
        return values
    window = max(1, min(window, len(values)))
    kernel = np.ones(window) / window
    return np.convolve(values, kernel, mode="valid")
