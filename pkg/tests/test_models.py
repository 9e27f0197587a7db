"""Tests for prediction models, per-example losses, and evaluation metrics."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from uvdro.models import (
    Dataset,
    DimensionMismatchError,
    LOG_LOSS_CLAMP,
    Metrics,
    ModelParams,
    evaluate,
    loss_vector,
    predict,
    weighted_loss_grad,
)

LN10 = 2.302585092994046


def central_fd_theta(objective, params, step=1e-6):
    """Central finite differences of a scalar objective over (weights, bias)."""
    gw = np.zeros_like(params.weights)
    gb = np.zeros_like(params.bias)
    w, b = params.weights, params.bias
    for idx in np.ndindex(*w.shape):
        dw = np.zeros_like(w)
        dw[idx] = step
        hi = objective(ModelParams(w + dw, b))
        lo = objective(ModelParams(w - dw, b))
        gw[idx] = (hi - lo) / (2 * step)
    for k in range(b.size):
        db = np.zeros_like(b)
        db[k] = step
        hi = objective(ModelParams(w, b + db))
        lo = objective(ModelParams(w, b - db))
        gb[k] = (hi - lo) / (2 * step)
    return gw, gb


def make_regression(n=6, d=3, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, d))
    y = rng.normal(size=n)
    return Dataset(features=x, labels=y)


def make_classification(n=8, d=3, k=4, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, d))
    y = rng.integers(0, k, size=n)
    return Dataset(features=x, labels=y, n_classes=k)


class TestDataset:
    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            Dataset(features=np.zeros((0, 2)), labels=np.zeros(0))

    def test_rejects_label_length_mismatch(self):
        with pytest.raises(ValueError):
            Dataset(features=np.zeros((3, 2)), labels=np.zeros(2))

    def test_classification_labels_validated(self):
        with pytest.raises(ValueError):
            Dataset(features=np.zeros((2, 1)), labels=np.array([0, 3]), n_classes=2)

    def test_requires_two_classes(self):
        with pytest.raises(ValueError):
            Dataset(features=np.zeros((2, 1)), labels=np.array([0, 0]))

    def test_embedding_replicates_validated(self):
        with pytest.raises(ValueError):
            Dataset(
                features=np.zeros((2, 1)),
                labels=np.zeros(2),
                uv_embeddings=[[np.ones(3)], []],
            )
        with pytest.raises(ValueError):
            Dataset(
                features=np.zeros((2, 1)),
                labels=np.zeros(2),
                uv_embeddings=[[np.ones(3)], [np.ones(4)]],
            )

    def test_classification_flag(self):
        reg = make_regression()
        cls = make_classification()
        assert not reg.is_classification
        assert cls.is_classification
        assert cls.n_classes == 4


class TestPredict:
    def test_zero_params_regression(self):
        p = ModelParams(np.zeros((3, 1)), np.zeros(1))
        out = predict(p, np.ones((5, 3)))
        np.testing.assert_array_equal(out, np.zeros(5))

    def test_zero_params_uniform_softmax(self):
        p = ModelParams(np.zeros((4, 10)), np.zeros(10))
        out = predict(p, np.random.default_rng(0).normal(size=(6, 4)))
        np.testing.assert_allclose(out, 0.1, atol=1e-12)

    def test_affine_evaluation(self):
        p = ModelParams(np.array([[2.0]]), np.array([1.0]))
        np.testing.assert_allclose(predict(p, np.array([[3.0]])), [7.0])

    def test_dimension_mismatch_named(self):
        p = ModelParams(np.zeros((3, 1)), np.zeros(1))
        with pytest.raises(DimensionMismatchError, match="expected 3.*got 2"):
            predict(p, np.zeros((4, 2)))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(min_value=1, max_value=40))
    def test_softmax_rows_sum_to_one(self, seed):
        rng = np.random.default_rng(seed)
        k = int(rng.integers(2, 7))
        p = ModelParams(rng.normal(scale=5, size=(3, k)), rng.normal(scale=5, size=k))
        out = predict(p, rng.normal(scale=5, size=(4, 3)))
        np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(out >= 0)


class TestLossVector:
    def test_perfect_fit_zero(self):
        data = make_regression()
        # one feature copies the label
        x = np.column_stack([data.labels, np.zeros(6)])
        d2 = Dataset(features=x, labels=data.labels)
        p = ModelParams(np.array([[1.0], [0.0]]), np.zeros(1))
        np.testing.assert_allclose(loss_vector(p, d2, "squared"), 0.0, atol=1e-24)

    def test_uniform_ten_class_log_loss(self):
        data = Dataset(
            features=np.zeros((5, 2)),
            labels=np.arange(5),
            n_classes=10,
        )
        p = ModelParams(np.zeros((2, 10)), np.zeros(10))
        np.testing.assert_allclose(loss_vector(p, data, "log"), LN10, atol=1e-12)

    def test_squared_simple(self):
        data = Dataset(features=np.array([[2.0]]), labels=np.array([1.0]))
        p = ModelParams(np.array([[1.0]]), np.zeros(1))
        np.testing.assert_allclose(loss_vector(p, data, "squared"), [1.0])

    def test_log_loss_clamped_finite(self):
        # saturated predictions never produce inf/nan and stay below the clamp bound
        data = Dataset(features=np.array([[100.0], [-100.0]]), labels=np.array([1, 1]))
        p = ModelParams(np.array([[50.0, -50.0]]), np.zeros(2))
        losses = loss_vector(p, data, "log")
        assert np.all(np.isfinite(losses))
        assert np.all(losses >= 0.0)
        assert np.all(losses <= -np.log(LOG_LOSS_CLAMP) + 1e-9)

    def test_log_loss_equals_minus_log_p(self):
        rng = np.random.default_rng(4)
        data = make_classification(seed=4)
        p = ModelParams(rng.normal(size=(3, 4)), rng.normal(size=4))
        probs = predict(p, data.features)
        expected = -np.log(probs[np.arange(8), data.labels])
        np.testing.assert_allclose(loss_vector(p, data, "log"), expected, atol=1e-12)

    def test_kind_label_mismatch_rejected(self):
        with pytest.raises(ValueError):
            loss_vector(
                ModelParams(np.zeros((3, 1)), np.zeros(1)), make_classification(), "squared"
            )
        with pytest.raises(ValueError):
            loss_vector(
                ModelParams(np.zeros((3, 4)), np.zeros(4)), make_regression(), "log"
            )


class TestEvaluate:
    def test_all_correct_accuracy(self):
        data = Dataset(
            features=np.array([[5.0], [-5.0]]), labels=np.array([1, 0]), n_classes=2
        )
        p = ModelParams(np.array([[-3.0, 3.0]]), np.zeros(2))
        m = evaluate(p, data, "log")
        assert m.accuracy == 1.0

    def test_relative_weights_single_nonzero(self):
        data = make_regression(d=2, seed=2)
        p = ModelParams(np.array([[0.0], [1.0]]), np.zeros(1))
        m = evaluate(p, data, "squared")
        np.testing.assert_allclose(m.relative_weights, [0.0, 1.0])

    def test_relative_weights_exclude_bias(self):
        data = make_regression(d=2, seed=3)
        p = ModelParams(np.array([[1.0], [3.0]]), np.array([100.0]))
        m = evaluate(p, data, "squared")
        np.testing.assert_allclose(m.relative_weights, [0.25, 0.75])

    def test_mean_loss_is_mean_of_loss_vector(self):
        rng = np.random.default_rng(6)
        data = make_classification(seed=6)
        p = ModelParams(rng.normal(size=(3, 4)), rng.normal(size=4))
        m = evaluate(p, data, "log")
        np.testing.assert_allclose(
            m.mean_loss, loss_vector(p, data, "log").mean(), atol=1e-12
        )

    def test_mse_matches_mean_loss_for_regression(self):
        rng = np.random.default_rng(8)
        data = make_regression(seed=8)
        p = ModelParams(rng.normal(size=(3, 1)), rng.normal(size=1))
        m = evaluate(p, data, "squared")
        np.testing.assert_allclose(m.mse, m.mean_loss, atol=1e-12)
        assert m.accuracy is None

    def test_metrics_invariants(self):
        m = Metrics(mean_loss=1.0, accuracy=0.5, mse=None, relative_weights=None)
        assert 0.0 <= m.accuracy <= 1.0
        with pytest.raises(ValueError):
            Metrics(mean_loss=1.0, accuracy=1.5, mse=None, relative_weights=None)
        with pytest.raises(ValueError):
            Metrics(mean_loss=1.0, accuracy=None, mse=-1.0, relative_weights=None)


class TestWeightedLossGrad:
    def test_matches_fd_squared(self):
        rng = np.random.default_rng(10)
        data = make_regression(seed=10)
        params = ModelParams(rng.normal(size=(3, 1)), rng.normal(size=1))
        s = rng.uniform(0.1, 1.0, size=6)

        def obj(p):
            return float(s @ loss_vector(p, data, "squared"))

        gw, gb = weighted_loss_grad(params, data, "squared", s)
        fw, fb = central_fd_theta(obj, params)
        np.testing.assert_allclose(gw, fw, rtol=1e-6, atol=1e-8)
        np.testing.assert_allclose(gb, fb, rtol=1e-6, atol=1e-8)

    def test_matches_fd_log(self):
        rng = np.random.default_rng(12)
        data = make_classification(seed=12)
        params = ModelParams(0.3 * rng.normal(size=(3, 4)), 0.3 * rng.normal(size=4))
        s = rng.uniform(0.1, 1.0, size=8)

        def obj(p):
            return float(s @ loss_vector(p, data, "log"))

        gw, gb = weighted_loss_grad(params, data, "log", s)
        fw, fb = central_fd_theta(obj, params)
        np.testing.assert_allclose(gw, fw, rtol=1e-5, atol=1e-7)
        np.testing.assert_allclose(gb, fb, rtol=1e-5, atol=1e-7)
