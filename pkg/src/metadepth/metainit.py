"""Prior learning over fine-grained tasks and the stage-1 baselines.

Reptile-style prior learning: every meta-iteration resets the explorer to the
current meta-parameters, takes ``L`` SGD steps on the same batch of ``K``
single-image tasks, and moves the meta-parameters a fraction ``beta`` of the
way toward the explored endpoint.
"""

from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from metadepth.errors import ConfigurationError
from metadepth.numerics.network import Network
from metadepth.numerics.optim import AdamWState, adamw_step, sgd_step
from metadepth.numerics.params import ParamVector
from metadepth.scenes.sampler import EpochSampler
from metadepth.seeding import stream
from metadepth.trainer import SupervisedConfig, loss_and_grad, run_supervised

STRATEGIES = ("reptile", "fomaml", "simple_pretrain", "grad_accum_two_stage", "grad_accum_single_stage", "none")


@dataclass(frozen=True)
class MetaConfig:
    N: int = 5
    L: int = 4
    K: int = 50
    alpha: float = 1e-3
    beta: float = 0.5
    seed: int = 0
    depth_range: tuple = (0.3, 10.0)
    loss_target: str = "depth"

    def __post_init__(self):
        object.__setattr__(self, "depth_range", tuple(float(v) for v in self.depth_range))

    def validate(self, allow_zero_steps=False):
        if self.N < 0:
            raise ConfigurationError("N must be non-negative")
        if self.L < (0 if allow_zero_steps else 1) or self.K < 1:
            raise ConfigurationError("L >= 1 and K >= 1 are required")
        if self.alpha < 0:
            raise ConfigurationError("alpha must be non-negative")
        if not (0 <= self.beta <= 1):
            raise ConfigurationError("beta must lie in (0, 1]")

    def iterations_per_epoch(self, dataset_size: int) -> int:
        return dataset_size // self.K

    def to_dict(self):
        d = asdict(self)
        d["depth_range"] = list(self.depth_range)
        return d

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigurationError(f"unknown meta keys: {sorted(unknown)}")
        return cls(**d)


REFERENCE_RESNET = MetaConfig(N=5, L=4, K=50, alpha=1e-3, beta=0.5)
REFERENCE_CONVNEXT = MetaConfig(N=5, L=4, K=50, alpha=5e-4, beta=0.5)


@dataclass
class PriorResult:
    theta_prior: ParamVector
    loss_trace: list = field(default_factory=list)
    wallclock: float = 0.0
    index: list = field(default_factory=list)  # (epoch, meta_iter) per trace entry
    elapsed: list = field(default_factory=list)  # wallclock seconds at each trace entry
    evaluations: list = field(default_factory=list)  # forward/backward passes per meta-iteration
    trajectory: list | None = None

    def write_csv(self, path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "meta_iter", "mean_inner_loss", "wallclock_s"])
            for (e, j), loss, t in zip(self.index, self.loss_trace, self.elapsed):
                w.writerow([e, j, repr(float(loss)), f"{t:.6f}"])
        return path


def _context(**kw):
    return {k: v for k, v in kw.items() if v is not None}


def inner_explore(theta0: ParamVector, batch, alpha: float, L: int, net: Network, depth_range=(0.3, 10.0),
                  loss_target="depth", epoch=None, iteration=None):
    """L SGD steps on one batch of tasks; returns ``(theta_L, mean_inner_loss)``.

    ``batch`` is ``(images, depths, valid)``; the loss is the mean over the K
    tasks, so its gradient carries the 1/K factor.
    """
    if L < 1:
        raise ConfigurationError("L must be at least 1")
    if len(batch[0]) == 0:
        raise ConfigurationError("empty task batch")
    theta = theta0
    losses = []
    for i in range(L):
        ctx = _context(epoch=epoch, iteration=iteration, inner_step=i)
        loss, grad = loss_and_grad(net, theta, batch, depth_range, loss_target, ctx)
        losses.append(loss)
        theta = sgd_step(theta, grad, alpha)
    return theta, float(np.mean(losses))


def reptile_meta_update(theta_meta: ParamVector, theta_expl: ParamVector, beta: float) -> ParamVector:
    theta_meta.check_layout(theta_expl)
    if beta == 1:
        return theta_expl.copy()
    b = theta_meta.dtype.type(beta)
    return theta_meta.with_values(theta_meta.values - b * (theta_meta.values - theta_expl.values))


def _sampler(cfg: MetaConfig, size: int, per_iter: int):
    if size < per_iter:
        raise ConfigurationError(f"dataset of {size} pairs cannot supply {per_iter} tasks per meta-iteration")
    return EpochSampler(size, per_iter, stream(cfg.seed, "meta_sampler"))


def run_prior_learning(cfg: MetaConfig, ds, net: Network, theta_init: ParamVector,
                       record_trajectory: bool = False) -> PriorResult:
    cfg.validate()
    theta_meta = theta_init.copy()
    result = PriorResult(theta_meta, trajectory=[theta_meta.copy()] if record_trajectory else None)
    if cfg.N == 0:
        return result
    sampler = _sampler(cfg, len(ds), cfg.K)
    start = time.perf_counter()
    for epoch in range(cfg.N):
        for j, idx in enumerate(sampler.epoch()):
            batch = ds.stack(idx)
            before = net.evaluations
            theta_expl0 = theta_meta  # explorer restarts from the current meta-parameters
            theta_L, loss = inner_explore(
                theta_expl0, batch, cfg.alpha, cfg.L, net, cfg.depth_range, cfg.loss_target, epoch, j
            )
            theta_meta = reptile_meta_update(theta_meta, theta_L, cfg.beta)
            result.evaluations.append(net.evaluations - before)
            result.loss_trace.append(loss)
            result.index.append((epoch, j))
            result.elapsed.append(time.perf_counter() - start)
            if record_trajectory:
                result.trajectory.append(theta_meta.copy())
    result.theta_prior = theta_meta
    result.wallclock = time.perf_counter() - start
    return result


def run_direct_sgd(cfg: MetaConfig, ds, net: Network, theta_init: ParamVector, lr: float,
                   record_trajectory: bool = False) -> PriorResult:
    """Plain SGD over the same batch stream that :func:`run_prior_learning` would draw."""
    theta = theta_init.copy()
    result = PriorResult(theta, trajectory=[theta.copy()] if record_trajectory else None)
    if cfg.N == 0:
        return result
    sampler = _sampler(cfg, len(ds), cfg.K)
    start = time.perf_counter()
    for epoch in range(cfg.N):
        for j, idx in enumerate(sampler.epoch()):
            loss, grad = loss_and_grad(net, theta, ds.stack(idx), cfg.depth_range, cfg.loss_target,
                                       {"epoch": epoch, "iteration": j})
            theta = sgd_step(theta, grad, lr)
            result.loss_trace.append(loss)
            result.index.append((epoch, j))
            result.elapsed.append(time.perf_counter() - start)
            result.evaluations.append(1)
            if record_trajectory:
                result.trajectory.append(theta.copy())
    result.theta_prior = theta
    result.wallclock = time.perf_counter() - start
    return result


def run_fomaml_variant(cfg: MetaConfig, ds, net: Network, theta_init: ParamVector, meta_lr: float | None = None,
                       same_query: bool = False, record_trajectory: bool = False) -> PriorResult:
    """First-order MAML with disjoint support/query task batches.

    Explores ``L`` steps on the support batch, evaluates the query-batch
    gradient at the explored parameters, and applies it to the
    meta-parameters with step ``meta_lr`` (``beta`` when not given). The loss
    trace holds the query loss. ``same_query`` reuses the support batch as
    query.
    """
    cfg.validate(allow_zero_steps=True)
    step = cfg.beta if meta_lr is None else meta_lr
    theta_meta = theta_init.copy()
    result = PriorResult(theta_meta, trajectory=[theta_meta.copy()] if record_trajectory else None)
    if cfg.N == 0:
        return result
    per_iter = cfg.K if same_query else 2 * cfg.K
    sampler = _sampler(cfg, len(ds), per_iter)
    start = time.perf_counter()
    for epoch in range(cfg.N):
        for j, idx in enumerate(sampler.epoch()):
            support = ds.stack(idx[: cfg.K])
            query = support if same_query else ds.stack(idx[cfg.K :])
            before = net.evaluations
            theta_L = theta_meta
            if cfg.L > 0:
                theta_L, _ = inner_explore(theta_meta, support, cfg.alpha, cfg.L, net, cfg.depth_range,
                                           cfg.loss_target, epoch, j)
            loss, g_query = loss_and_grad(net, theta_L, query, cfg.depth_range, cfg.loss_target,
                                          {"epoch": epoch, "iteration": j, "phase": "query"})
            theta_meta = sgd_step(theta_meta, g_query, step)
            result.evaluations.append(net.evaluations - before)
            result.loss_trace.append(loss)
            result.index.append((epoch, j))
            result.elapsed.append(time.perf_counter() - start)
            if record_trajectory:
                result.trajectory.append(theta_meta.copy())
    result.theta_prior = theta_meta
    result.wallclock = time.perf_counter() - start
    return result


# supplementary baselines ---------------------------------------------

SIMPLE_PRETRAIN_PRESETS = {
    "S1-row-2": {"lr": 1e-3, "weight_decay": 1e-1, "epochs": 5},
    "S1-row-3": {"lr": 3e-4, "weight_decay": 1e-1, "epochs": 5},
    "S1-row-4": {"lr": 3e-4, "weight_decay": 1e-2, "epochs": 5},
}

GRAD_ACCUM_PRESETS = {
    "Setting-1": {"window": 4, "lr": 1.2e-3, "mode": "two_stage", "epochs": 5},
    "Setting-2": {"window": 4, "lr": 1.2e-3, "mode": "single_stage", "epochs": 15},
}


def run_simple_pretraining(ds, net: Network, theta_init: ParamVector, lr: float, weight_decay: float,
                           epochs: int, batch_size: int = 8, seed: int = 0,
                           depth_range=(0.3, 10.0)) -> ParamVector:
    if lr <= 0:
        raise ConfigurationError("lr must be positive")
    if epochs == 0:
        return theta_init.copy()
    cfg = SupervisedConfig(epochs=epochs, lr=lr, weight_decay=weight_decay, batch_size=batch_size,
                           depth_range=depth_range, seed=seed)
    return run_supervised(theta_init, ds, net, cfg).theta_star


def run_grad_accum(ds, net: Network, theta_init: ParamVector, window: int, lr: float, mode: str = "two_stage",
                   epochs: int = 5, batch_size: int = 8, weight_decay: float = 0.01, seed: int = 0,
                   depth_range=(0.3, 10.0), record_trajectory: bool = False):
    """AdamW where each update uses the mean gradient of ``window`` consecutive batches.

    Returns the final parameters, or ``(params, trajectory)`` when
    ``record_trajectory`` is set. ``mode`` only labels how the caller uses the
    result (stage-1 prior or the whole training); the update rule is shared.
    """
    if window < 1:
        raise ConfigurationError("window must be at least 1")
    if mode not in ("two_stage", "single_stage"):
        raise ConfigurationError(f"unknown grad-accumulation mode {mode!r}")
    # same stream as run_supervised so that window=1 replays the plain baseline
    sampler = EpochSampler(len(ds), min(batch_size, len(ds)), stream(seed, "sampler"))
    params = theta_init.copy()
    state = AdamWState.init(params, lr=lr, weight_decay=weight_decay)
    trajectory = [params.copy()]
    pending = []
    for epoch in range(epochs):
        for it, idx in enumerate(sampler.epoch()):
            _, grad = loss_and_grad(net, params, ds.stack(idx), depth_range, "depth",
                                    {"epoch": epoch, "iteration": it})
            pending.append(grad.values)
            if len(pending) == window:
                mean = pending[0] if window == 1 else np.mean(pending, axis=0).astype(params.dtype)
                state, params = adamw_step(state, params, params.with_values(mean))
                pending = []
                trajectory.append(params.copy())
    return (params, trajectory) if record_trajectory else params


def beta_sweep(cfg_base: MetaConfig, betas, ds, net: Network, theta_init: ParamVector) -> dict:
    """Prior learning for each beta with shared initialization and batch order."""
    betas = list(betas)
    if not betas:
        raise ConfigurationError("betas must be non-empty")
    for b in betas:
        if not (0 < b <= 1):
            raise ConfigurationError(f"beta {b} outside (0, 1]")
    out = {}
    for b in betas:
        cfg = MetaConfig(**{**cfg_base.to_dict(), "beta": b})
        out[b] = run_prior_learning(cfg, ds, net, theta_init)
    return out

