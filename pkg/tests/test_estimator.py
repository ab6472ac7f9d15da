"""Estimator facade: fit/sample/predict/score plus the get_params contract."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from sonargen.errors import ValidationError
from sonargen.estimator import SonarImageGenerator


def small_estimator(**overrides):
    kwargs = dict(tile_size=16, epochs=1, batch_size=3, base_width=8,
                  resnet_blocks=1, n_downsample=1, disc_levels=2, disc_width=8,
                  random_state=0)
    kwargs.update(overrides)
    return SonarImageGenerator(**kwargs)


def make_pairs(n=4, height=32, width=32, num_classes=3, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, num_classes, (n, height, width))
    y = rng.uniform(0, 1, (n, height, width)).astype(np.float32)
    return X, y


@pytest.fixture(scope="module")
def fitted():
    X, y = make_pairs()
    return small_estimator().fit(X, y), X, y


class TestSklearnContract:
    def test_get_params_round_trips_through_clone(self):
        est = small_estimator(epochs=2, gan_weight=0.25)
        cloned = clone(est)
        assert cloned.get_params() == est.get_params()
        assert cloned is not est

    def test_set_params_chains(self):
        est = small_estimator().set_params(epochs=4, lr=1e-3)
        assert est.epochs == 4 and est.lr == 1e-3

    def test_unfitted_predict_raises(self):
        X, _ = make_pairs()
        with pytest.raises(NotFittedError):
            small_estimator().predict(X)


class TestFit:
    def test_fit_sets_state(self, fitted):
        est, X, _ = fitted
        assert est.classes_ == ("class_0", "class_1", "class_2")
        assert est.n_features_in_ == 32 * 32
        assert len(est.history_) == (4 * 4) // 3
        assert est.models_.g_steps == len(est.history_)

    def test_explicit_class_names(self):
        X, y = make_pairs(num_classes=2)
        est = small_estimator(class_names=("sand", "rock", "object")).fit(X, y)
        assert est.classes_ == ("sand", "rock", "object")

    def test_shape_validation(self):
        X, y = make_pairs()
        with pytest.raises(ValidationError):
            small_estimator().fit(X[:, 0], y)
        with pytest.raises(ValidationError):
            small_estimator().fit(X, y[:2])
        with pytest.raises(ValidationError):
            small_estimator().fit(X, y[:, :16, :])

    def test_too_few_class_names(self):
        X, y = make_pairs(num_classes=3)
        with pytest.raises(ValidationError):
            small_estimator(class_names=("a", "b")).fit(X, y)

    def test_non_tile_aligned_maps(self):
        X, y = make_pairs(height=24, width=24)
        with pytest.raises(ValidationError):
            small_estimator().fit(X, y)


class TestSample:
    def test_shapes_and_determinism(self, fitted):
        est, X, _ = fitted
        out = est.sample(X[:2], seed=3)
        assert out.shape == (2, 32, 32, 1)
        assert out.min() >= 0.0 and out.max() <= 1.0
        assert np.array_equal(out, est.sample(X[:2], seed=3))
        assert not np.array_equal(out, est.sample(X[:2], seed=4))

    def test_each_map_gets_its_own_seed(self, fitted):
        est, X, _ = fitted
        twice = est.sample(np.stack([X[0], X[0]]), seed=3)
        assert not np.array_equal(twice[0], twice[1])
        assert np.array_equal(twice[1], est.sample(X[:1], seed=4)[0])

    def test_new_dims_accepted(self, fitted):
        est, _, _ = fitted
        maps = np.zeros((1, 16, 48), dtype=np.int64)
        assert est.sample(maps).shape == (1, 16, 48, 1)

    def test_unknown_labels_rejected(self, fitted):
        est, _, _ = fitted
        maps = np.full((1, 32, 32), 9, dtype=np.int64)
        with pytest.raises(ValidationError):
            est.sample(maps)

    def test_predict_uses_random_state(self, fitted):
        est, X, _ = fitted
        assert np.array_equal(est.predict(X[:1]),
                              est.sample(X[:1], seed=est.random_state))


class TestScore:
    def test_score_is_negative_mae(self, fitted):
        est, X, y = fitted
        score = est.score(X[:2], y[:2])
        generated = est.sample(X[:2], seed=est.random_state)
        expected = -float(np.abs(generated - y[:2, :, :, None]).mean())
        assert score == pytest.approx(expected)
        assert -1.0 <= score <= 0.0
