"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""

import time

import numpy as np
import pytest
from layercheck import check_layer
from reference_eval import reference_median, reference_metrics

from metadepth import checkpoint
from metadepth.cli import dump_config, main
from metadepth.config import ExperimentConfig, Stage1
from metadepth.errors import DataError
from metadepth.evaluation import (
    INTRA_PROTOCOL,
    EvalProtocol,
    compare_methods,
    compute_metrics,
    evaluate_model,
    evaluate_predictions,
    median_scale,
)
from metadepth.experiments import desk_benchmark, reptile_vs_fomaml
from metadepth.geometry import CameraIntrinsics, distance_ratio
from metadepth.metainit import (
    SIMPLE_PRETRAIN_PRESETS,
    MetaConfig,
    run_direct_sgd,
    run_grad_accum,
    run_prior_learning,
    run_simple_pretraining,
)
from metadepth.numerics import NetworkSpec, build_network, precision
from metadepth.numerics import tensor as T
from metadepth.scenes import SceneGenConfig, generate_dataset
from metadepth.trainer import SupervisedConfig, run_supervised

SEEDS = (0, 1, 2, 3, 4)
pytestmark = pytest.mark.acceptance


@pytest.fixture
def verdict(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})")
        assert ok, detail

    return emit


def _random_layer(rng, kind):
    n, c = int(rng.integers(1, 3)), int(rng.integers(1, 4))
    h, w = int(rng.integers(2, 6)), int(rng.integers(2, 6))
    if kind == "conv":
        stride = int(rng.integers(1, 3))
        co = int(rng.integers(1, 4))
        return (lambda p: T.conv2d(p["x"], p["w"], p["b"], stride),
                [("x", (n, c, h, w)), ("w", (co, c, 3, 3)), ("b", (co,))], ())
    if kind == "elu":
        return lambda p: T.elu(p["x"]), [("x", (n, c, h, w))], ()
    if kind == "sigmoid":
        return lambda p: T.sigmoid(p["x"]), [("x", (n, c, h, w))], ()
    if kind == "upsample":
        return lambda p: T.upsample2x(p["x"]), [("x", (n, c, h, w))], ()
    if kind == "concat":
        c2 = int(rng.integers(1, 3))
        return (lambda p: T.concat([p["x"], p["y"]], axis=1), [("x", (n, c, h, w)), ("y", (n, c2, h, w))], ())
    if kind == "depth_head":
        lo, span = float(rng.uniform(0.05, 0.5)), float(rng.uniform(0.5, 3))
        return lambda p: T.reciprocal(T.affine(T.sigmoid(p["x"]), span, lo)), [("x", (n, c, h, w))], ()
    if kind == "l2_loss":
        gt = rng.uniform(0.5, 5, (n, 1, h, w))
        valid = rng.random((n, 1, h, w)) > 0.3
        valid[:, 0, 0, 0] = True
        return lambda p: T.masked_mse(p["x"], gt, valid), [("x", (n, 1, h, w))], ()
    raise KeyError(kind)


def test_criterion_1_gradient_correctness(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = {}
    with precision("f64"):
        for kind in ("conv", "elu", "sigmoid", "upsample", "concat", "depth_head", "l2_loss"):
            errs = []
            for _ in range(20):
                build, shapes, positive = _random_layer(rng, kind)
                errs.append(check_layer(build, shapes, rng, eps=1e-5, positive=positive))
            worst[kind] = max(errs)
    elapsed = time.perf_counter() - start
    ok = all(e < 1e-4 for e in worst.values()) and elapsed < 60
    verdict(1, ok, f"worst relative error {max(worst.values()):.1e} over 7 layer types x 20, {elapsed:.1f}s")


def test_criterion_2_reptile_collapse_law(verdict):
    start = time.perf_counter()
    gen = SceneGenConfig(num_scenes=2, frames_per_scene=25, num_test_scenes=0, image_size=(8, 8), seed=11)
    with precision("f64"):
        train = generate_dataset(gen)[0]
        net, theta0 = build_network(NetworkSpec(input_size=(8, 8), encoder_blocks=((4, 2), (4, 2)),
                                                head_channels=(4, 4)), 11)
        cfg = MetaConfig(N=5, L=1, K=5, alpha=0.01, beta=1.0, seed=11)
        meta = run_prior_learning(cfg, train, net, theta0, record_trajectory=True)
        sgd = run_direct_sgd(cfg, train, net, theta0, lr=0.01, record_trajectory=True)
    iters = len(meta.trajectory) - 1
    worst = max(np.linalg.norm(a.values - b.values) / max(np.linalg.norm(b.values), 1e-300)
                for a, b in zip(meta.trajectory, sgd.trajectory))
    elapsed = time.perf_counter() - start
    ok = iters >= 50 and worst < 1e-9 and elapsed < 30
    verdict(2, ok, f"{iters} meta-iterations, max relative deviation {worst:.1e}, {elapsed:.1f}s")


def _metric_triple(rng, i):
    n = int(rng.integers(1, 40))
    gt = 2.0 ** rng.integers(-2, 4, n) * 4.0
    pred = gt * rng.choice([0.8, 1.25, 1.5625, 1.953125, 0.5, 2.0, 1.0], n)
    jitter = rng.random(n) < 0.5
    pred = np.where(jitter, pred * rng.uniform(0.6, 1.6, n), pred)
    valid = rng.random(n) < 0.8
    valid[int(rng.integers(n))] = True
    if i % 2 and valid.sum() % 2 == 1 and n > valid.sum():
        valid[np.flatnonzero(~valid)[0]] = True  # push toward even-length medians
    return pred, gt, valid


def test_criterion_3_metric_oracle(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(77)
    worst, even, odd, boundary = 0.0, 0, 0, 0
    for i in range(1000):
        pred, gt, valid = _metric_triple(rng, i)
        got = compute_metrics(pred, gt, valid).metrics()
        ref = reference_metrics(pred, gt, valid)
        worst = max(worst, max(abs(got[k] - ref[k]) for k in ref))
        scaled, _ = median_scale(pred, gt, valid)
        s = reference_median(gt[valid].tolist()) / reference_median(pred[valid].tolist())
        ref_s = reference_metrics([p * s for p in pred], gt, valid)
        got_s = compute_metrics(scaled, gt, valid).metrics()
        worst = max(worst, max(abs(got_s[k] - ref_s[k]) for k in ref_s))
        even += valid.sum() % 2 == 0
        odd += valid.sum() % 2 == 1
        boundary += int(np.any(np.maximum(pred / gt, gt / pred)[valid] == 1.25))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-12 and even > 0 and odd > 0 and boundary > 0 and elapsed < 30
    verdict(3, ok, f"max abs deviation {worst:.1e}; {even} even / {odd} odd medians; "
                   f"{boundary} triples hit ratio 1.25; {elapsed:.1f}s")


@pytest.fixture(scope="module")
def desk_runs():
    start = time.perf_counter()
    runs = [desk_benchmark(s) for s in SEEDS]
    return runs, time.perf_counter() - start


def test_criterion_4_scene_variety_direction(desk_runs, verdict):
    runs, elapsed = desk_runs
    imps = [r.improvement for r in runs]
    med = float(np.median(imps))
    ok = med <= -5.0 and elapsed < 600
    verdict(4, ok, f"median RMSE change {med:+.1f}% (per seed {', '.join(f'{v:+.1f}' for v in imps)}), "
                   f"need <= -5.0%; {elapsed:.0f}s")


def test_criterion_5_texture_suppression(desk_runs, verdict):
    runs, _ = desk_runs
    rates = [r.region_win_rate for r in runs]
    med = float(np.median(rates))
    ok = med >= 0.6 and all(r.n_regions > 0 for r in runs)
    verdict(5, ok, f"median fraction of textured regions with lower variance {med:.2f} "
                   f"(per seed {', '.join(f'{v:.2f}' for v in rates)}), need >= 0.60")


def test_criterion_6_reptile_vs_fomaml(verdict):
    start = time.perf_counter()
    pairs = [reptile_vs_fomaml(s) for s in SEEDS]
    wins = sum(r < f for r, f in pairs)
    elapsed = time.perf_counter() - start
    ok = wins >= 4 and elapsed < 300
    verdict(6, ok, f"Reptile lower in {wins}/5 seeds ("
                   + ", ".join(f"{r:.2f} vs {f:.2f}" for r, f in pairs) + f"); {elapsed:.0f}s")


def test_criterion_7_protocol_invariances(verdict):
    rng = np.random.default_rng(5)
    proto = EvalProtocol(cap=10.0, median_scaling=True, name="cross")
    worst, ordered = 0.0, True
    for _ in range(200):
        shape = (1, int(rng.integers(2, 9)), int(rng.integers(2, 9)))
        gts = [rng.uniform(0.1, 12, shape) * (rng.random(shape) > 0.1) for _ in range(3)]
        for g in gts:
            g.flat[0] = 5.0
        preds = [rng.uniform(0.1, 12, shape) for _ in range(3)]
        base = evaluate_predictions(preds, gts, proto).metrics()
        for c in (0.5, 3.0, 10.0):
            scaled = evaluate_predictions([p * c for p in preds], gts, proto).metrics()
            worst = max(worst, max(abs(scaled[k] - base[k]) for k in base))
        rec = compute_metrics(preds[0], gts[0], gts[0] > 0)
        ordered &= rec.delta1 <= rec.delta2 <= rec.delta3
    ratio_ok = True
    for h, w in ((5, 7), (6, 8), (9, 9), (4, 3)):
        K = CameraIntrinsics.default_for(h, w)
        r = distance_ratio(K)
        v, u = np.mgrid[0:h, 0:w]
        at_pp = (u == K.cx) & (v == K.cy)
        ratio_ok &= bool(np.all(r >= 1) and np.all(r[at_pp] == 1) and np.all(r[~at_pp] > 1))
    ok = worst <= 1e-12 and ordered and ratio_ok
    verdict(7, ok, f"rescaling deviation {worst:.1e}; delta ordering {ordered}; distance ratio {ratio_ok}")


TINY = ExperimentConfig(
    generator=SceneGenConfig(num_scenes=2, frames_per_scene=8, num_test_scenes=1, test_frames_per_scene=4,
                             image_size=(8, 8)),
    network=NetworkSpec(input_size=(8, 8), encoder_blocks=((4, 2), (4, 2)), head_channels=(4, 4)),
    stage1=Stage1(meta=MetaConfig(N=2, L=2, K=4, alpha=0.01, beta=0.5)),
    stage2=SupervisedConfig(epochs=2, batch_size=4),
)


def test_criterion_8_determinism_and_persistence(tmp_path, verdict):
    cfg_path = str(dump_config(TINY, tmp_path / "cfg.json"))
    codes = []
    for run in ("a", "b"):
        out = str(tmp_path / run)
        for cmd in ("generate", "train", "eval"):
            codes.append(main([cmd, "--config", cfg_path, "--out", out, "--seed", "9"]))
    same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
               for f in ("report.csv", "report.json"))
    params, _ = checkpoint.load(tmp_path / "a" / "final.ckpt", TINY.network.digest())
    blob = checkpoint.encode(params, TINY.network.digest())
    loaded, _ = checkpoint.decode(blob)
    exact = loaded.values.tobytes() == params.values.tobytes() and loaded.layout == params.layout
    rng = np.random.default_rng(0)
    detected = 0
    for _ in range(200):
        bad = bytearray(blob)
        bad[int(rng.integers(len(bad)))] ^= int(rng.integers(1, 256))
        try:
            checkpoint.decode(bytes(bad))
        except DataError:
            detected += 1
    ok = codes == [0] * 6 and same and exact and detected == 200
    verdict(8, ok, f"exit codes {codes}; reports identical {same}; round trip exact {exact}; "
                   f"corruptions detected {detected}/200")


def test_criterion_9_baseline_harness(verdict):
    gen = SceneGenConfig(num_scenes=2, frames_per_scene=12, num_test_scenes=1, test_frames_per_scene=4,
                         image_size=(8, 8), seed=4)
    spec = NetworkSpec(input_size=(8, 8), encoder_blocks=((4, 2), (4, 2)), head_channels=(4, 4))
    with precision("f64"):
        train, test, _ = generate_dataset(gen)
        net, theta0 = build_network(spec, 4)
        _, acc = run_grad_accum(train, net, theta0, window=1, lr=1e-3, epochs=2, batch_size=4, seed=4,
                                record_trajectory=True)
        plain = [theta0.copy()]
        for steps in range(1, len(acc)):
            plain.append(run_supervised(theta0, train, net, SupervisedConfig(steps=steps, lr=1e-3, batch_size=4,
                                                                              seed=4)).theta_star)
        dev = max(np.linalg.norm(a.values - b.values) / np.linalg.norm(b.values) for a, b in zip(acc, plain))
        stage2 = SupervisedConfig(epochs=1, batch_size=4, seed=4)
        records = {"plain": evaluate_model(run_supervised(theta0, train, net, stage2), test, INTRA_PROTOCOL)}
        for name, p in SIMPLE_PRETRAIN_PRESETS.items():
            prior = run_simple_pretraining(train, net, theta0, p["lr"], p["weight_decay"], 1, 4, 4)
            records[name] = evaluate_model(run_supervised(prior, train, net, stage2), test, INTRA_PROTOCOL)
    report = compare_methods(records, "plain")
    rows = [line for line in report.to_csv().splitlines() if line.startswith("improvement")]
    ok = dev < 1e-9 and len(rows) == len(SIMPLE_PRETRAIN_PRESETS)
    verdict(9, ok, f"window=1 deviation {dev:.1e} over {len(acc) - 1} updates; {len(rows)} pretraining rows emitted")
