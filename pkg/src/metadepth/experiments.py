"""Canned desk-scale recipes comparing meta-initialization with its baselines."""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from metadepth.evaluation import INTRA_PROTOCOL, evaluate_model, region_error_variance
from metadepth.metainit import MetaConfig, run_fomaml_variant, run_prior_learning
from metadepth.numerics.network import DESK_SPEC, NetworkSpec, build_network
from metadepth.scenes.generator import SceneGenConfig, generate_dataset
from metadepth.trainer import SupervisedConfig, predict_depth, run_supervised, smoothed

# From-scratch desk networks need a larger inner step than a pretrained encoder.
# N, L and K keep their reference values; alpha and beta were picked on seeds
# 100-104, disjoint from the acceptance seeds.
DESK_META = MetaConfig(N=5, L=4, K=50, alpha=0.02, beta=0.9)
DESK_GENERATOR = SceneGenConfig()
DESK_SUPERVISED = SupervisedConfig()


def equal_compute_steps(meta: MetaConfig, train_size: int, stage2: SupervisedConfig) -> int:
    """Stage-2 step count for a direct baseline that also absorbs the stage-1 budget.

    Stage 1 costs N*T*L gradient evaluations on K images each; the direct run
    gets the same number of images split into its own batches.
    """
    bs = min(stage2.batch_size, train_size)
    stage2_steps = stage2.steps if stage2.steps is not None else stage2.epochs * (train_size // bs)
    T = meta.iterations_per_epoch(train_size)
    return stage2_steps + (meta.N * T * meta.L * meta.K) // bs


def region_variances(model, ds, annotations, net=None):
    """Per textured-plane region variance of predicted depth about the plane."""
    net = net or model.network()
    out = []
    cache = {}
    for idx, region in annotations.textured_planes(ds):
        if idx not in cache:
            cache[idx] = predict_depth(model, ds.pairs[idx].image, net)
        pair = ds.pairs[idx]
        out.append(region_error_variance(cache[idx], pair.depth, region.mask & pair.valid))
    return np.asarray(out)


@dataclass
class BenchmarkResult:
    seed: int
    rmse: dict
    records: dict
    improvement: float  # percent change in held-out RMSE, meta vs direct
    region_win_rate: float  # fraction of textured regions where meta variance < direct
    n_regions: int
    wallclock: float
    extras: dict = field(default_factory=dict)


def desk_benchmark(seed: int, generator: SceneGenConfig = DESK_GENERATOR, spec: NetworkSpec = DESK_SPEC,
                   meta: MetaConfig = DESK_META, stage2: SupervisedConfig = DESK_SUPERVISED) -> BenchmarkResult:
    """Meta-initialization + supervised stage against equal-compute direct training."""
    start = time.perf_counter()
    train, test, ann = generate_dataset(replace(generator, seed=seed))
    net, theta0 = build_network(spec, seed)
    meta = replace(meta, seed=seed, depth_range=stage2.depth_range)
    stage2 = replace(stage2, seed=seed)

    prior = run_prior_learning(meta, train, net, theta0)
    m_meta = run_supervised(prior.theta_prior, train, net, stage2, provenance={"stage1": "reptile"})
    direct_cfg = replace(stage2, steps=equal_compute_steps(meta, len(train), stage2))
    m_direct = run_supervised(theta0, train, net, direct_cfg, provenance={"stage1": "none"})

    records = {name: evaluate_model(m, test, INTRA_PROTOCOL) for name, m in (("meta", m_meta), ("direct", m_direct))}
    rmse = {k: r.rmse for k, r in records.items()}
    v_meta = region_variances(m_meta, test, ann, net)
    v_direct = region_variances(m_direct, test, ann, net)
    win = float(np.mean(v_meta < v_direct)) if len(v_meta) else float("nan")
    return BenchmarkResult(
        seed=seed,
        rmse=rmse,
        records=records,
        improvement=100.0 * (rmse["meta"] - rmse["direct"]) / rmse["direct"],
        region_win_rate=win,
        n_regions=len(v_meta),
        wallclock=time.perf_counter() - start,
        extras={"prior_trace": prior.loss_trace, "direct_steps": direct_cfg.steps},
    )


def reptile_vs_fomaml(seed: int, generator: SceneGenConfig = DESK_GENERATOR, spec: NetworkSpec = DESK_SPEC,
                      meta: MetaConfig = DESK_META, window: int = 10):
    """Final smoothed stage-1 loss of Reptile and FOMAML under matched budgets.

    Both runs use the same number of meta-iterations and gradient evaluations
    per iteration: FOMAML explores L-1 steps on its support batch and spends
    the remaining evaluation on the disjoint query batch. Its meta step is
    ``beta * alpha * L``, the displacement scale of one Reptile update.
    Returns ``(reptile_loss, fomaml_loss)``.
    """
    train, _, _ = generate_dataset(replace(generator, seed=seed))
    net, theta0 = build_network(spec, seed)
    meta = replace(meta, seed=seed)
    rep = run_prior_learning(meta, train, net, theta0)
    iters = len(rep.loss_trace)
    per_epoch = len(train) // (2 * meta.K)
    fo_cfg = replace(meta, L=meta.L - 1, N=-(-iters // per_epoch))
    fo = run_fomaml_variant(fo_cfg, train, net, theta0, meta_lr=meta.beta * meta.alpha * meta.L)
    fo_trace = fo.loss_trace[:iters]
    return float(smoothed(rep.loss_trace, window)[-1]), float(smoothed(fo_trace, window)[-1])
