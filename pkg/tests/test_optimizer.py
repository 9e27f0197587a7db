import numpy as np
import pytest

from uvdro.distances import DistanceMatrix, pairwise_euclidean
from uvdro.models import Dataset, loss_vector
from uvdro.objectives import RobustnessConfig
from uvdro.optimizer import TrainConfig, TrainTrace, adagrad_step, train


def make_regression(n=16, d=3, seed=0, noise=0.1):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, d))
    beta = rng.normal(size=d)
    y = x @ beta + noise * rng.normal(size=n)
    return Dataset(features=x, labels=y)


def make_classification(n=18, d=4, k=3, seed=1):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, d))
    y = rng.integers(0, k, size=n)
    return Dataset(features=x, labels=y, n_classes=k)


def dx_for(data):
    return pairwise_euclidean(data.features)


def zero_dc(n):
    return DistanceMatrix(np.zeros((n, n)))


class TestAdagradStep:
    def test_zero_grad_no_move(self):
        p = np.array([1.0, -2.0, 3.0])
        a = np.array([0.5, 0.0, 4.0])
        new_p, new_a = adagrad_step(p, np.zeros(3), a, lr=0.1, eps=1e-8)
        np.testing.assert_array_equal(new_p, p)
        np.testing.assert_array_equal(new_a, a)

    def test_first_step_is_signed_lr(self):
        g = np.array([3.0, -2.0, 0.5])
        new_p, new_a = adagrad_step(np.zeros(3), g, np.zeros(3), lr=0.1, eps=1e-12)
        np.testing.assert_allclose(new_p, -0.1 * np.sign(g), rtol=1e-9)
        np.testing.assert_array_equal(new_a, g * g)

    def test_repeated_step_shrinks(self):
        g = np.array([1.0, -4.0])
        p1, a1 = adagrad_step(np.zeros(2), g, np.zeros(2), lr=0.1, eps=1e-10)
        p2, a2 = adagrad_step(p1, g, a1, lr=0.1, eps=1e-10)
        step1 = np.abs(p1)
        step2 = np.abs(p2 - p1)
        assert np.all(step2 < step1)

    def test_inputs_not_mutated(self):
        p = np.array([1.0, 2.0])
        g = np.array([0.5, -0.5])
        a = np.array([1.0, 1.0])
        p0, g0, a0 = p.copy(), g.copy(), a.copy()
        adagrad_step(p, g, a, lr=0.1, eps=1e-8)
        np.testing.assert_array_equal(p, p0)
        np.testing.assert_array_equal(g, g0)
        np.testing.assert_array_equal(a, a0)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            adagrad_step(np.zeros(3), np.zeros(2), np.zeros(3), lr=0.1, eps=1e-8)

    def test_negative_accum_rejected(self):
        with pytest.raises(ValueError):
            adagrad_step(np.zeros(2), np.zeros(2), np.array([-1.0, 0.0]), lr=0.1, eps=1e-8)


class TestTrainConfig:
    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0.0, steps=10)
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0.1, steps=0)
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0.1, steps=10, adagrad_epsilon=0.0)

    def test_defaults(self):
        tc = TrainConfig(learning_rate=0.01, steps=100)
        assert tc.adagrad_epsilon == 1e-6
        assert tc.seed == 0
        assert tc.convergence_tol is None
        assert tc.transport_learning_rate is None


class TestTrainErm:
    def test_single_step_trace(self):
        data = make_regression()
        rc = RobustnessConfig(alpha=0.5, lipschitz=0.0, objective="erm")
        tc = TrainConfig(learning_rate=0.01, steps=1)
        trace = train(data, None, None, rc, tc, "squared")
        assert isinstance(trace, TrainTrace)
        assert trace.objective.shape == (1,)
        assert np.isfinite(trace.objective).all()
        assert trace.dual is None

    def test_objective_decreases_after_burn_in(self):
        data = make_regression(n=32, d=3, seed=4)
        rc = RobustnessConfig(alpha=1.0, lipschitz=0.0, objective="erm")
        tc = TrainConfig(learning_rate=1e-3, steps=400)
        trace = train(data, None, None, rc, tc, "squared")
        diffs = np.diff(trace.objective[10:])
        assert np.all(diffs <= 1e-12)
        assert trace.objective[-1] < trace.objective[0]

    def test_training_fits_linear_data(self):
        data = make_regression(n=64, d=2, seed=7, noise=0.0)
        rc = RobustnessConfig(alpha=1.0, lipschitz=0.0, objective="erm")
        tc = TrainConfig(learning_rate=0.05, steps=3000)
        trace = train(data, None, None, rc, tc, "squared")
        final = loss_vector(trace.params, data, "squared").mean()
        assert final < 1e-2

    def test_determinism_bitwise(self):
        data = make_classification()
        rc = RobustnessConfig(alpha=1.0, lipschitz=0.0, ridge=0.01, objective="erm")
        tc = TrainConfig(learning_rate=0.02, steps=50, seed=3)
        t1 = train(data, None, None, rc, tc, "log")
        t2 = train(data, None, None, rc, tc, "log")
        np.testing.assert_array_equal(t1.objective, t2.objective)
        np.testing.assert_array_equal(t1.params.weights, t2.params.weights)
        np.testing.assert_array_equal(t1.params.bias, t2.params.bias)

    def test_early_stop_shortens_trace(self):
        data = make_regression(n=16, d=2, seed=2)
        rc = RobustnessConfig(alpha=1.0, lipschitz=0.0, objective="erm")
        tc = TrainConfig(learning_rate=0.05, steps=5000, convergence_tol=1e-6)
        trace = train(data, None, None, rc, tc, "squared")
        assert trace.objective.size < 5000

    def test_nan_abort_names_step(self):
        data = make_regression(n=8, d=2, seed=5)
        rc = RobustnessConfig(alpha=1.0, lipschitz=0.0, objective="erm")
        tc = TrainConfig(learning_rate=1e200, steps=200)
        with np.errstate(all="ignore"), pytest.raises(ValueError, match=r"step \d+"):
            train(data, None, None, rc, tc, "squared")


class TestTrainCvar:
    def test_objective_decreases(self):
        data = make_regression(n=40, d=3, seed=9)
        rc = RobustnessConfig(alpha=0.3, lipschitz=0.0, objective="cvar_dro")
        tc = TrainConfig(learning_rate=0.02, steps=600)
        trace = train(data, None, None, rc, tc, "squared")
        assert trace.objective[-1] < trace.objective[0]
        assert trace.dual is None

    def test_alpha_one_matches_erm_value(self):
        # at alpha=1 the CVaR value is the mean, so both traces start equal
        data = make_regression(n=20, d=2, seed=11)
        tc = TrainConfig(learning_rate=0.01, steps=1)
        rc_cvar = RobustnessConfig(alpha=1.0, lipschitz=0.0, objective="cvar_dro")
        rc_erm = RobustnessConfig(alpha=1.0, lipschitz=0.0, objective="erm")
        t_cvar = train(data, None, None, rc_cvar, tc, "squared")
        t_erm = train(data, None, None, rc_erm, tc, "squared")
        np.testing.assert_allclose(t_cvar.objective[0], t_erm.objective[0], rtol=1e-12)


class TestTrainUvdro:
    def test_dual_state_feasible_after_training(self):
        data = make_regression(n=24, d=2, seed=13)
        dx = dx_for(data)
        dc = zero_dc(data.n)
        rc = RobustnessConfig(alpha=0.3, lipschitz=1.0, objective="uv_dro")
        tc = TrainConfig(learning_rate=0.05, steps=120)
        trace = train(data, dx, dc, rc, tc, "squared")
        b = trace.dual.transport
        assert np.all(b >= 0.0)
        np.testing.assert_array_equal(np.diag(b), np.zeros(data.n))
        assert trace.dual.eta >= 0.0
        assert np.isfinite(trace.objective).all()

    def test_objective_decreases(self):
        data = make_regression(n=24, d=2, seed=14)
        dx = dx_for(data)
        rc = RobustnessConfig(alpha=0.3, lipschitz=0.5, objective="uv_dro")
        tc = TrainConfig(learning_rate=0.05, steps=500)
        trace = train(data, dx, zero_dc(data.n), rc, tc, "squared")
        assert trace.objective[-1] < trace.objective[0]

    def test_covshift_ignores_uv_distances(self):
        data = make_regression(n=16, d=2, seed=15)
        dx = dx_for(data)
        rng = np.random.default_rng(16)
        pts = rng.normal(size=(data.n, 2))
        dc = pairwise_euclidean(pts)
        rc = RobustnessConfig(alpha=0.4, lipschitz=1.0, objective="covshift_dro")
        tc = TrainConfig(learning_rate=0.03, steps=60)
        with_dc = train(data, dx, dc, rc, tc, "squared")
        without = train(data, dx, None, rc, tc, "squared")
        np.testing.assert_array_equal(with_dc.objective, without.objective)
        np.testing.assert_array_equal(with_dc.dual.transport, without.dual.transport)

    def test_uvdro_requires_dx(self):
        data = make_regression(n=8, d=2, seed=17)
        rc = RobustnessConfig(alpha=0.4, lipschitz=1.0, objective="uv_dro")
        tc = TrainConfig(learning_rate=0.03, steps=5)
        with pytest.raises(ValueError, match="distance"):
            train(data, None, None, rc, tc, "squared")

    def test_determinism_bitwise(self):
        data = make_regression(n=12, d=2, seed=18)
        dx = dx_for(data)
        dc = zero_dc(data.n)
        rc = RobustnessConfig(alpha=0.25, lipschitz=1.0, ridge=0.001, objective="uv_dro")
        tc = TrainConfig(learning_rate=0.04, steps=80, seed=21)
        t1 = train(data, dx, dc, rc, tc, "squared")
        t2 = train(data, dx, dc, rc, tc, "squared")
        np.testing.assert_array_equal(t1.objective, t2.objective)
        np.testing.assert_array_equal(t1.dual.transport, t2.dual.transport)
        assert t1.dual.eta == t2.dual.eta
        np.testing.assert_array_equal(t1.params.weights, t2.params.weights)

    def test_transport_lr_override_changes_b_only_scale(self):
        data = make_regression(n=12, d=2, seed=19)
        dx = dx_for(data)
        rc = RobustnessConfig(alpha=0.25, lipschitz=1.0, objective="uv_dro")
        base = TrainConfig(learning_rate=0.04, steps=40)
        slow_b = TrainConfig(learning_rate=0.04, steps=40, transport_learning_rate=1e-9)
        t1 = train(data, dx, None, rc, base, "squared")
        t2 = train(data, dx, None, rc, slow_b, "squared")
        # a frozen transport matrix stays near zero
        assert np.abs(t2.dual.transport).max() < 1e-6
        assert not np.array_equal(t1.objective, t2.objective)
