import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from metadepth.errors import ConfigurationError, ShapeError
from metadepth.estimator import MetaInitDepthEstimator, check_depths, check_images
from metadepth.numerics import NetworkSpec
from metadepth.scenes import SceneGenConfig, generate_dataset

SPEC = NetworkSpec(input_size=(8, 8), encoder_blocks=((4, 2), (4, 2)), head_channels=(4, 4))


@pytest.fixture(scope="module")
def xy():
    train, test, _ = generate_dataset(SceneGenConfig(num_scenes=2, frames_per_scene=6, num_test_scenes=1,
                                                     image_size=(8, 8)))
    X, y, valid = train.stack()
    return np.asarray(X, dtype=np.float64), np.where(valid, y, 0.0)


def small(**kw):
    return MetaInitDepthEstimator(network=SPEC, N=1, L=2, K=4, alpha=0.01, epochs=1, batch_size=4, **kw)


def test_get_params_and_clone():
    est = small(random_state=3)
    params = est.get_params()
    assert params["random_state"] == 3 and params["network"] == SPEC
    twin = clone(est)
    assert twin.get_params() == params and twin is not est


def test_fit_predict_score(xy):
    X, y = xy
    est = small().fit(X, y)
    pred = est.predict(X)
    assert pred.shape == (len(X), 1, 8, 8)
    assert np.all((pred > 0.3) & (pred < 10))
    assert est.score(X, y) < 0
    assert est.prior_ is not None and len(est.prior_.loss_trace) == 3


def test_deterministic(xy):
    X, y = xy
    a = small().fit(X, y).predict(X)
    b = small().fit(X, y).predict(X)
    assert a.tobytes() == b.tobytes()


@pytest.mark.parametrize("strategy", ["fomaml", "none"])
def test_strategies(xy, strategy):
    X, y = xy
    est = small(strategy=strategy).fit(X, y)
    assert (est.prior_ is None) == (strategy == "none")


def test_not_fitted(xy):
    with pytest.raises(NotFittedError):
        small().predict(xy[0])


def test_validation(xy):
    X, y = xy
    with pytest.raises(ShapeError):
        check_images(X[:, :2])
    with pytest.raises(ShapeError):
        check_images(X, (16, 16))
    with pytest.raises(ConfigurationError):
        check_images(X * 2)
    with pytest.raises(ValueError):
        check_images(np.full_like(X, np.nan))
    assert check_depths(y[:, 0], X).shape == y.shape
    with pytest.raises(ShapeError):
        check_depths(y[:3], X)
    with pytest.raises(ConfigurationError):
        small(strategy="magic").fit(X, y)
