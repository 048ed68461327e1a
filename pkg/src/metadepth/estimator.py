"""scikit-learn style estimator around the two-stage training pipeline."""

from __future__ import annotations

from dataclasses import replace

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from metadepth.errors import ConfigurationError, ShapeError
from metadepth.evaluation import EvalProtocol, evaluate_predictions
from metadepth.metainit import MetaConfig, run_fomaml_variant, run_prior_learning
from metadepth.numerics import tensor as T
from metadepth.numerics.network import DESK_SPEC, NetworkSpec, build_network
from metadepth.scenes.dataset import Dataset, FineGrainedTask
from metadepth.trainer import SupervisedConfig, TrainedModel, predict_depth, run_supervised

ESTIMATOR_STRATEGIES = ("reptile", "fomaml", "none")


def check_images(X, size=None) -> np.ndarray:
    """Validate an image batch of shape ``(n, 3, H, W)`` with values in [0, 1]."""
    X = check_array(X, allow_nd=True, dtype=np.float64, ensure_all_finite=True, ensure_min_samples=1)
    if X.ndim != 4 or X.shape[1] != 3:
        raise ShapeError(f"images must have shape (n, 3, H, W), got {X.shape}")
    if size is not None and tuple(X.shape[2:]) != tuple(size):
        raise ShapeError(f"images are {X.shape[2:]}, the network expects {tuple(size)}")
    if X.min() < 0 or X.max() > 1:
        raise ConfigurationError("image values must lie in [0, 1]")
    return X


def check_depths(y, X: np.ndarray) -> np.ndarray:
    """Validate depth maps against ``X``; accepts ``(n, H, W)`` or ``(n, 1, H, W)``. Zero marks invalid."""
    y = check_array(y, allow_nd=True, dtype=np.float64, ensure_all_finite=True, ensure_2d=False)
    if y.ndim == 3:
        y = y[:, None]
    if y.shape != (X.shape[0], 1) + X.shape[2:]:
        raise ShapeError(f"depths of shape {y.shape} do not match images {X.shape}")
    if np.any(y < 0):
        raise ConfigurationError("depths must be non-negative")
    return y


class MetaInitDepthEstimator(RegressorMixin, BaseEstimator):
    """Single-image depth regressor trained with an optional meta-learned initialization.

    ``fit`` runs stage 1 (``strategy``) on the given pairs and then the
    supervised stage from the resulting prior. ``score`` is the negative
    per-image RMSE over valid pixels, so larger is better.
    """

    def __init__(self, network=None, strategy="reptile", N=5, L=4, K=50, alpha=0.02, beta=0.9, epochs=15,
                 lr=3e-4, weight_decay=0.01, batch_size=8, depth_range=(0.3, 10.0), loss_target="depth",
                 random_state=0):
        self.network = network
        self.strategy = strategy
        self.N = N
        self.L = L
        self.K = K
        self.alpha = alpha
        self.beta = beta
        self.epochs = epochs
        self.lr = lr
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.depth_range = depth_range
        self.loss_target = loss_target
        self.random_state = random_state

    def _spec(self, X) -> NetworkSpec:
        if self.network is None:
            return replace(DESK_SPEC, input_size=tuple(X.shape[2:]))
        if isinstance(self.network, dict):
            return NetworkSpec.from_dict(self.network)
        return self.network

    def fit(self, X, y):
        if self.strategy not in ESTIMATOR_STRATEGIES:
            raise ConfigurationError(f"strategy must be one of {ESTIMATOR_STRATEGIES}")
        X = check_images(X)
        y = check_depths(y, X)
        spec = self._spec(X)
        check_images(X, spec.input_size)
        seed = int(self.random_state)
        d_min, d_max = (float(v) for v in self.depth_range)
        valid = (y > 0) & (y <= d_max)
        dtype = T.get_dtype()
        pairs = [FineGrainedTask(X[i].astype(dtype), y[i], valid[i], 0, i) for i in range(len(X))]
        ds = Dataset(pairs, {"split": "train", "seed": seed})
        net, theta0 = build_network(spec, seed)
        meta = MetaConfig(N=self.N, L=self.L, K=min(self.K, len(ds)), alpha=self.alpha, beta=self.beta, seed=seed,
                          depth_range=(d_min, d_max), loss_target=self.loss_target)
        self.prior_ = None
        theta = theta0
        if self.strategy == "reptile":
            self.prior_ = run_prior_learning(meta, ds, net, theta0)
        elif self.strategy == "fomaml":
            self.prior_ = run_fomaml_variant(replace(meta, K=max(1, min(self.K, len(ds) // 2))), ds, net, theta0)
        if self.prior_ is not None:
            theta = self.prior_.theta_prior
        stage2 = SupervisedConfig(epochs=self.epochs, lr=self.lr, weight_decay=self.weight_decay,
                                  batch_size=self.batch_size, depth_range=(d_min, d_max), seed=seed,
                                  loss_target=self.loss_target)
        self.model_ = run_supervised(theta, ds, net, stage2, provenance={"stage1": self.strategy})
        self.input_size_ = tuple(X.shape[2:])
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = check_images(X, self.input_size_)
        return predict_depth(self.model_, X.astype(T.get_dtype()))

    def score(self, X, y, sample_weight=None):
        if sample_weight is not None:
            raise ConfigurationError("sample weights are not supported")
        X = check_images(X)
        y = check_depths(y, X)
        proto = EvalProtocol(cap=float(self.depth_range[1]), name="estimator")
        return -evaluate_predictions(list(self.predict(X)), list(y), proto).rmse

    @property
    def trained_model(self) -> TrainedModel:
        check_is_fitted(self, "model_")
        return self.model_
