"""Command line: generate, train, eval, compare, export-cloud, sweep-beta.

Default layout under ``--out``::

    data/train, data/test      datasets
    prior.ckpt, final.ckpt     checkpoints (+ .json provenance sidecars)
    stage1_trace.csv           stage-1 loss trace
    stage2_trace.csv           stage-2 loss trace
    report.csv, report.json    evaluation report
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from metadepth import checkpoint
from metadepth.config import ExperimentConfig, dump_config, load_config
from metadepth.errors import ConfigurationError, DataError, MetaDepthError
from metadepth.evaluation import (
    CROSS_PROTOCOL,
    INTRA_PROTOCOL,
    compare_methods,
    evaluate_model,
    read_report,
    report_rows,
    write_report,
)
from metadepth.experiments import equal_compute_steps
from metadepth.geometry import CameraIntrinsics, backproject, write_ply
from metadepth.metainit import (
    GRAD_ACCUM_PRESETS,
    SIMPLE_PRETRAIN_PRESETS,
    STRATEGIES,
    beta_sweep,
    run_fomaml_variant,
    run_grad_accum,
    run_prior_learning,
    run_simple_pretraining,
)
from metadepth.numerics import tensor as T
from metadepth.numerics.network import Network
from metadepth.scenes.dataset import load_dataset, read_depth, read_png, save_dataset
from metadepth.scenes.generator import generate_dataset
from metadepth.trainer import TrainedModel, predict_depth, run_supervised


def _out(cfg: ExperimentConfig) -> Path:
    return Path(cfg.output_dir)


def _data_dir(cfg, split, given=None) -> Path:
    return Path(given) if given else _out(cfg) / "data" / split


def _load_split(path):
    path = Path(path)
    if not (path / "manifest.json").exists():
        raise DataError(f"no dataset at {path}; run `generate` first or pass --data")
    return load_dataset(path)


def _provenance(cfg, **extra):
    prov = {"config_hash": cfg.digest(), "seeds": list(cfg.seeds), "strategy": cfg.stage1.strategy}
    prov.update(extra)
    return prov


def _write_trace(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


# subcommands ---------------------------------------------------------


def cmd_generate(cfg: ExperimentConfig):
    cfg.generator.validate()  # before any I/O
    train, test, ann = generate_dataset(cfg.generator)
    paths = []
    for split, ds in (("train", train), ("test", test)):
        ds.meta = dict(ds.meta, experiment_hash=cfg.digest())
        paths.append(save_dataset(ds, _data_dir(cfg, split), ann))
    return paths


def _run_stage1(cfg, train, net, theta0):
    """Return ``(theta_prior, trace_rows)``."""
    s1, meta = cfg.stage1, cfg.stage1.meta
    kind = s1.strategy
    if kind == "reptile":
        res = run_prior_learning(meta, train, net, theta0)
    elif kind == "fomaml":
        res = run_fomaml_variant(meta, train, net, theta0, meta_lr=s1.fomaml_meta_lr)
    elif kind == "simple_pretrain":
        p = SIMPLE_PRETRAIN_PRESETS[s1.pretrain_preset]
        theta = run_simple_pretraining(train, net, theta0, p["lr"], p["weight_decay"], p["epochs"],
                                       cfg.stage2.batch_size, meta.seed, cfg.stage2.depth_range)
        return theta, []
    elif kind == "grad_accum_two_stage":
        p = GRAD_ACCUM_PRESETS[s1.grad_accum_preset]
        theta = run_grad_accum(train, net, theta0, p["window"], p["lr"], "two_stage", p["epochs"],
                               cfg.stage2.batch_size, cfg.stage2.weight_decay, meta.seed, cfg.stage2.depth_range)
        return theta, []
    else:  # none, grad_accum_single_stage: the prior is the fresh initialization
        return theta0.copy(), []
    rows = [(e, j, repr(float(l)), f"{t:.6f}") for (e, j), l, t in zip(res.index, res.loss_trace, res.elapsed)]
    return res.theta_prior, rows


def cmd_train(cfg: ExperimentConfig, stage="both", data=None, resume=None, equal_compute=False):
    cfg.validate()
    out = _out(cfg)
    out.mkdir(parents=True, exist_ok=True)
    train, _ = _load_split(_data_dir(cfg, "train", data))
    dump_config(cfg, out / "config.json")
    net = Network(cfg.network)
    digest = cfg.network.digest()
    written = []
    if stage in ("prior", "both"):
        theta0 = net.init_params(cfg.stage1.meta.seed)
        theta_prior, rows = _run_stage1(cfg, train, net, theta0)
        if rows:
            _write_trace(out / "stage1_trace.csv", ["epoch", "meta_iter", "mean_inner_loss", "wallclock_s"], rows)
        written.append(checkpoint.save(out / "prior.ckpt", theta_prior, digest, _provenance(cfg, stage="prior")))
    if stage in ("supervised", "both"):
        theta_prior, _ = checkpoint.load(Path(resume) if resume else out / "prior.ckpt", digest)
        theta_prior = theta_prior.astype(T.get_dtype())
        stage2 = cfg.stage2
        if equal_compute:
            stage2 = replace(stage2, steps=equal_compute_steps(cfg.stage1.meta, len(train), stage2))
        if cfg.stage1.strategy == "grad_accum_single_stage":
            p = GRAD_ACCUM_PRESETS[cfg.stage1.grad_accum_preset]
            theta = run_grad_accum(train, net, theta_prior, p["window"], p["lr"], "single_stage", p["epochs"],
                                   stage2.batch_size, stage2.weight_decay, stage2.seed, stage2.depth_range)
            trace = []
        else:
            model = run_supervised(theta_prior, train, net, stage2)
            theta, trace = model.theta_star, model.loss_trace
        if trace:
            _write_trace(out / "stage2_trace.csv", ["epoch", "iter", "loss"],
                         [(e, i, repr(float(l))) for e, i, l in trace])
        prov = _provenance(cfg, stage="supervised", stage2=stage2.to_dict())
        written.append(checkpoint.save(out / "final.ckpt", theta, digest, prov))
    return written


def _protocol(cfg, name):
    if name is None:
        return cfg.protocol
    return {"intra": INTRA_PROTOCOL, "cross": CROSS_PROTOCOL}[name]


def cmd_eval(cfg: ExperimentConfig, ckpt=None, data=None, protocol=None, method="model", stem="report",
             predictor=None):
    """Evaluate a checkpoint. ``predictor`` replaces the network, for tests."""
    proto = _protocol(cfg, protocol)
    ckpt = Path(ckpt) if ckpt else _out(cfg) / "final.ckpt"
    test, _ = _load_split(_data_dir(cfg, "test", data))
    theta, _ = checkpoint.load(ckpt, cfg.network.digest())
    model = TrainedModel(theta.astype(T.get_dtype()), cfg.network, cfg.stage2.depth_range)
    rec = evaluate_model(predictor or model, test, proto)
    rows = report_rows([(method, proto.name, str(test.meta.get("split", "test")), rec)])
    extra = {"config_hash": cfg.digest(), "checkpoint": checkpoint.content_digest(ckpt.read_bytes()),
             "protocol": proto.to_dict()}
    return write_report(rows, _out(cfg), stem, extra)


def cmd_compare(reports, baseline, out_dir=None):
    records = {}
    for path in reports:
        for name, rec in read_report(path).items():
            if name in records:
                raise ConfigurationError(f"method {name!r} appears in more than one report")
            records[name] = rec
    if len(records) < 2:
        raise ConfigurationError("comparison needs at least two methods")
    report = compare_methods(records, baseline)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "comparison.csv").write_text(report.to_csv())
        (Path(out_dir) / "comparison.txt").write_text(report.to_text())
    return report


def _read_valid(path, shape):
    if path is None:
        return np.ones(shape, dtype=bool)
    path = Path(path)
    if path.suffix == ".png":
        return read_png(path)[0] > 0.5
    return read_depth(path)[0] > 0


def cmd_export_cloud(cfg, ckpt, image_path, output, intrinsics=None, valid=None, binary=False):
    theta, _ = checkpoint.load(ckpt, cfg.network.digest())
    model = TrainedModel(theta.astype(T.get_dtype()), cfg.network, cfg.stage2.depth_range)
    image = read_png(image_path)
    if image.shape[0] != 3:
        raise DataError(f"{image_path}: expected an RGB image")
    H, W = image.shape[1:]
    if intrinsics:
        K = CameraIntrinsics(**json.loads(Path(intrinsics).read_text()))
    else:
        K = CameraIntrinsics.default_for(H, W)
    depth = predict_depth(model, image)[0]
    cloud = backproject(depth, image, K, _read_valid(valid, (H, W)))
    return write_ply(output, cloud, binary=binary)


def cmd_sweep_beta(cfg: ExperimentConfig, betas, data=None):
    cfg.validate()
    train, _ = _load_split(_data_dir(cfg, "train", data))
    net = Network(cfg.network)
    theta0 = net.init_params(cfg.stage1.meta.seed)
    results = beta_sweep(cfg.stage1.meta, betas, train, net, theta0)
    out = _out(cfg)
    out.mkdir(parents=True, exist_ok=True)
    paths = [res.write_csv(out / f"stage1_trace_beta{b:g}.csv") for b, res in results.items()]
    summary = {"config_hash": cfg.digest(),
               "final_loss": {f"{b:g}": float(res.loss_trace[-1]) for b, res in results.items() if res.loss_trace}}
    (out / "beta_sweep.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    return paths


# argument handling ---------------------------------------------------


def _global_flags(parser, nested):
    # flags are accepted before or after the subcommand; nested copies must not shadow the outer values
    kw = {"default": argparse.SUPPRESS} if nested else {}
    parser.add_argument("--config", help="experiment config JSON", **kw)
    parser.add_argument("--seed", type=int, help="master seed (overrides the config)", **kw)
    parser.add_argument("--seeds", help="comma-separated seeds, one isolated replicate each", **kw)
    parser.add_argument("--out", help="output directory (overrides the config)", **kw)
    parser.add_argument("--precision", choices=("f32", "f64"), **(kw or {"default": "f32"}))
    return parser


def build_parser():
    common = _global_flags(argparse.ArgumentParser(add_help=False), nested=True)
    p = _global_flags(argparse.ArgumentParser(prog="metadepth", description=__doc__.splitlines()[0]), nested=False)
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("generate", parents=[common], help="write train/test datasets")

    t = sub.add_parser("train", parents=[common], help="stage-1 prior and/or stage-2 training")
    t.add_argument("--stage", choices=("prior", "supervised", "both"), default="both")
    t.add_argument("--strategy", choices=STRATEGIES)
    t.add_argument("--preset", choices=("paper", "paper-convnext", "desk"))
    t.add_argument("--data", help="train split directory")
    t.add_argument("--resume", help="prior checkpoint for --stage supervised")
    t.add_argument("--equal-compute", action="store_true",
                   help="extend stage 2 by the stage-1 gradient budget (direct baseline)")

    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    e.add_argument("--checkpoint")
    e.add_argument("--data", help="test split directory")
    e.add_argument("--protocol", choices=("intra", "cross"))
    e.add_argument("--method", default="model", help="method label in the report")
    e.add_argument("--stem", default="report")

    c = sub.add_parser("compare", parents=[common], help="comparison table with improvement rows")
    c.add_argument("reports", nargs="+")
    c.add_argument("--baseline", required=True)

    x = sub.add_parser("export-cloud", parents=[common], help="predicted-depth point cloud as PLY")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--image", required=True)
    x.add_argument("--intrinsics", help="JSON with fx, fy, cx, cy, width, height")
    x.add_argument("--valid", help="mask PNG or depth file; nonzero pixels are kept")
    x.add_argument("--output", required=True)
    x.add_argument("--binary", action="store_true")

    s = sub.add_parser("sweep-beta", parents=[common], help="stage-1 traces for several beta values")
    s.add_argument("--betas", default="0.5,0.9")
    s.add_argument("--data")
    return p


def _resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "preset", None):
        cfg = cfg.with_meta_preset(args.preset)
    if getattr(args, "strategy", None):
        cfg = replace(cfg, stage1=replace(cfg.stage1, strategy=args.strategy))
    if args.seed is not None:
        cfg = cfg.for_seed(args.seed)
    if args.out:
        cfg = replace(cfg, output_dir=args.out)
    return cfg


def dispatch(args, cfg):
    cmd = args.command
    if cmd == "generate":
        for p in cmd_generate(cfg):
            print(p)
    elif cmd == "train":
        for p in cmd_train(cfg, args.stage, args.data, args.resume, args.equal_compute):
            print(p)
    elif cmd == "eval":
        for p in cmd_eval(cfg, args.checkpoint, args.data, args.protocol, args.method, args.stem):
            print(p)
    elif cmd == "compare":
        print(cmd_compare(args.reports, args.baseline, args.out).to_text(), end="")
    elif cmd == "export-cloud":
        print(cmd_export_cloud(cfg, args.checkpoint, args.image, args.output, args.intrinsics, args.valid,
                               args.binary))
    elif cmd == "sweep-beta":
        try:
            betas = [float(b) for b in args.betas.split(",")]
        except ValueError as exc:
            raise ConfigurationError(f"bad --betas: {args.betas}") from exc
        for p in cmd_sweep_beta(cfg, betas, args.data):
            print(p)


def _replicate(args, cfg, seed):
    T.set_precision(args.precision)
    rep = replace(cfg.for_seed(seed), output_dir=str(Path(cfg.output_dir) / f"seed-{seed}"))
    dispatch(args, rep)
    return seed


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with T.precision(args.precision):
            cfg = _resolve_config(args)
            if args.seeds and args.command != "compare":
                seeds = [int(s) for s in args.seeds.split(",")]
                workers = min(len(seeds), os.cpu_count() or 1)
                with ProcessPoolExecutor(max_workers=workers) as pool:
                    list(pool.map(_replicate, [args] * len(seeds), [cfg] * len(seeds), seeds))
            else:
                dispatch(args, cfg)
    except MetaDepthError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code
    except ValueError as exc:  # malformed numeric flags and the like
        print(f"error: {exc}", file=sys.stderr)
        return ConfigurationError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
