"""Depth error metrics, evaluation protocols and method comparison reports."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from metadepth.errors import ConfigurationError, DegenerateInputError, DomainError, EmptySupportError

ERROR_METRICS = ("mae", "absrel", "rmse", "rmse_log", "err_variance")
ACCURACY_METRICS = ("delta1", "delta2", "delta3")
METRIC_NAMES = ("mae", "absrel", "rmse", "rmse_log", "delta1", "delta2", "delta3", "err_variance")


@dataclass
class MetricsRecord:
    mae: float
    absrel: float
    rmse: float
    rmse_log: float
    delta1: float  # percent
    delta2: float
    delta3: float
    err_variance: float  # population variance of |pred - gt|, m^2
    n_valid_pixels: int
    n_images: int = 1
    n_skipped: int = 0

    def as_dict(self):
        return asdict(self)

    def metrics(self):
        return {k: getattr(self, k) for k in METRIC_NAMES}


@dataclass(frozen=True)
class EvalProtocol:
    cap: float = 10.0
    median_scaling: bool = False
    per_image_aggregation: bool = True
    name: str = "custom"

    def __post_init__(self):
        if not (self.cap > 0) or not math.isfinite(self.cap):
            raise ConfigurationError("cap must be a finite positive depth")
        if not self.per_image_aggregation:
            raise ConfigurationError("only per-image aggregation is supported")

    def to_dict(self):
        return {"cap": self.cap, "median_scaling": self.median_scaling, "name": self.name}


INTRA_PROTOCOL = EvalProtocol(cap=20.0, median_scaling=False, name="intra")
CROSS_PROTOCOL = EvalProtocol(cap=10.0, median_scaling=True, name="cross")
PROTOCOLS = {"intra": INTRA_PROTOCOL, "cross": CROSS_PROTOCOL}


def valid_mask(gt, cap: float) -> np.ndarray:
    if not (cap > 0) or not math.isfinite(cap):
        raise ConfigurationError("cap must be a finite positive depth")
    gt = np.asarray(gt)
    return (gt > 0) & (gt <= cap)


def median_scale(pred, gt, valid):
    """Scale ``pred`` so that its median over ``valid`` matches the ground truth's."""
    pred = np.asarray(pred, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    if not valid.any():
        raise DegenerateInputError("median scaling needs at least one valid pixel")
    m_pred = float(np.median(pred[valid]))
    if m_pred == 0:
        raise DegenerateInputError("median of prediction is zero")
    scale = float(np.median(np.asarray(gt, dtype=np.float64)[valid])) / m_pred
    return pred * scale, scale


def compute_metrics(pred, gt, valid) -> MetricsRecord:
    valid = np.asarray(valid, dtype=bool)
    x = np.asarray(pred, dtype=np.float64)[valid]
    y = np.asarray(gt, dtype=np.float64)[valid]
    n = x.size
    if n == 0:
        raise EmptySupportError("no valid pixels to evaluate")
    if np.any(x <= 0):
        raise DomainError("predictions must be positive on valid pixels")
    if np.any(y <= 0):
        raise DomainError("ground truth must be positive on valid pixels")
    err = np.abs(x - y)
    ratio = np.maximum(x / y, y / x)
    return MetricsRecord(
        mae=float(err.mean()),
        absrel=float((err / y).mean()),
        rmse=float(np.sqrt(np.mean(err**2))),
        rmse_log=float(np.sqrt(np.mean((np.log(x) - np.log(y)) ** 2))),
        delta1=100.0 * float(np.mean(ratio < 1.25)),
        delta2=100.0 * float(np.mean(ratio < 1.25**2)),
        delta3=100.0 * float(np.mean(ratio < 1.25**3)),
        err_variance=float(err.var()),
        n_valid_pixels=int(n),
    )


def aggregate(records) -> MetricsRecord:
    """Unweighted mean over per-image records, in the given order."""
    if not records:
        raise EmptySupportError("no images were evaluated")
    means = {k: float(np.mean([getattr(r, k) for r in records])) for k in METRIC_NAMES}
    return MetricsRecord(**means, n_valid_pixels=sum(r.n_valid_pixels for r in records), n_images=len(records))


def _predictor(model):
    if callable(model) and not hasattr(model, "theta_star"):
        return model
    from metadepth.trainer import predict_depth

    net = model.network()
    return lambda images: predict_depth(model, images, net)


def evaluate_predictions(preds, gts, proto: EvalProtocol) -> MetricsRecord:
    per_image, skipped = [], 0
    for pred, gt in zip(preds, gts):
        mask = valid_mask(gt, proto.cap)
        if not mask.any():
            skipped += 1
            continue
        if proto.median_scaling:
            pred, _ = median_scale(pred, gt, mask)
        per_image.append(compute_metrics(pred, gt, mask))
    rec = aggregate(per_image)
    rec.n_skipped = skipped
    return rec


def evaluate_model(model, ds, proto: EvalProtocol, batch_size: int = 64) -> MetricsRecord:
    """Per-image evaluation of ``model`` on ``ds``.

    ``model`` is a TrainedModel or any callable mapping a ``(B, 3, H, W)``
    image batch to ``(B, 1, H, W)`` depths.
    """
    if len(ds) == 0:
        raise ConfigurationError("cannot evaluate on an empty dataset")
    predict = _predictor(model)
    preds = []
    for lo in range(0, len(ds), batch_size):
        images, _, _ = ds.stack(range(lo, min(lo + batch_size, len(ds))))
        preds.extend(np.asarray(predict(images), dtype=np.float64))
    return evaluate_predictions(preds, [p.depth for p in ds.pairs], proto)


# comparison ----------------------------------------------------------


def improvement(method: float, baseline: float, metric: str) -> float:
    """Signed percent change for error metrics, point difference for accuracies."""
    if metric in ACCURACY_METRICS:
        return method - baseline
    if baseline == 0:
        return 0.0 if method == 0 else math.inf
    return 100.0 * (method - baseline) / baseline


@dataclass
class ComparisonReport:
    baseline: str
    records: dict
    improvements: dict = field(default_factory=dict)  # method -> metric -> value

    def rows(self):
        for name, rec in self.records.items():
            yield name, rec.metrics()

    def to_text(self, digits: int = 3) -> str:
        cols = list(METRIC_NAMES)
        header = ["method"] + cols
        body = [[name] + [f"{v:.{digits}f}" for v in m.values()] for name, m in self.rows()]
        for name, imp in self.improvements.items():
            cells = []
            for k in cols:
                unit = "pt" if k in ACCURACY_METRICS else "%"
                cells.append(f"{imp[k]:+.1f}{unit}")
            body.append([f"improvement {name}"] + cells)
        widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
        lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
                 for r in [header] + body]
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row", "method"] + list(METRIC_NAMES))
        for name, m in self.rows():
            w.writerow(["metrics", name] + [repr(v) for v in m.values()])
        for name, imp in self.improvements.items():
            w.writerow(["improvement", name] + [repr(imp[k]) for k in METRIC_NAMES])
        return buf.getvalue()


def compare_methods(records: dict, baseline_name: str) -> ComparisonReport:
    if baseline_name not in records:
        raise ConfigurationError(f"baseline {baseline_name!r} not among {sorted(records)}")
    base = records[baseline_name]
    imps = {}
    for name, rec in records.items():
        if name == baseline_name:
            continue
        imps[name] = {k: improvement(getattr(rec, k), getattr(base, k), k) for k in METRIC_NAMES}
    return ComparisonReport(baseline_name, dict(records), imps)


# report files --------------------------------------------------------

REPORT_COLUMNS = ("method", "protocol", "dataset") + tuple(f.name for f in fields(MetricsRecord))


def report_rows(entries):
    """``entries``: iterable of ``(method, protocol, dataset, MetricsRecord)``."""
    return [dict(zip(REPORT_COLUMNS, (m, p, d, *asdict(r).values()))) for m, p, d, r in entries]


def write_report(rows, directory, stem="report", extra: dict | None = None):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    csv_path = directory / f"{stem}.csv"
    with open(csv_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    payload = {"rows": rows}
    payload.update(extra or {})
    json_path = directory / f"{stem}.json"
    json_path.write_text(json.dumps(payload, indent=1, sort_keys=True))
    return csv_path, json_path


def read_report(path):
    """Load ``{method: MetricsRecord}`` from a report JSON or CSV file."""
    path = Path(path)
    if path.suffix == ".json":
        rows = json.loads(path.read_text())["rows"]
    else:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    out = {}
    for r in rows:
        kwargs = {}
        for f in fields(MetricsRecord):
            if f.name not in r:
                raise ConfigurationError(f"{path}: report lacks column {f.name!r}")
            kwargs[f.name] = int(r[f.name]) if f.type in ("int", int) else float(r[f.name])
        out[str(r["method"])] = MetricsRecord(**kwargs)
    return out


def region_error_variance(pred, gt, mask) -> float:
    """Population variance of ``pred - gt`` inside one region."""
    mask = np.asarray(mask, dtype=bool)
    return float(np.var((np.asarray(pred) - np.asarray(gt))[mask]))
