"""Feedforward error model, gain baseline and regression metrics."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rbadjoint.estimator import (
    ErrorModel,
    ErrorTrainingSet,
    FeedforwardNet,
    GainTable,
    fnn_forward,
    fnn_train,
    gain_baseline_estimate,
    gain_from_pair,
    regression_metrics,
    train_error_model,
    true_error_norms,
)
from rbadjoint.rom import compute_residuals, greedy_offline, project_operators, solve_adjoint_reduced


def _synthetic_pairs(n=40, width=6, seed=0):
    rng = np.random.default_rng(seed)
    R = np.exp(rng.normal(-3, 1, (n, 1))) * np.exp(rng.normal(0, 0.2, (n, width)))
    return ErrorTrainingSet(R, 0.5 * R**1.1)


class TestTrueErrorNorms:
    def test_identical(self, rng):
        S = rng.normal(size=(4, 5))
        assert not np.any(true_error_norms(S, S))

    def test_zero_reduced(self, rng):
        S = rng.normal(size=(4, 5))
        np.testing.assert_allclose(true_error_norms(S, np.zeros_like(S)), np.linalg.norm(S, axis=1))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**16))
    def test_shift_bounded_by_shift_norm(self, seed):
        rng = np.random.default_rng(seed)
        full, S = rng.normal(size=(2, 3, 4))
        w = rng.normal(size=4)
        diff = np.abs(true_error_norms(full, S + w) - true_error_norms(full, S))
        assert np.all(diff <= np.linalg.norm(w) + 1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            true_error_norms(np.zeros((2, 3)), np.zeros((3, 3)))


class TestNetwork:
    def test_zero_parameters_give_zero(self):
        net = FeedforwardNet([3, 4, 2], [np.zeros((3, 4)), np.zeros((4, 2))], [np.zeros(4), np.zeros(2)])
        assert not np.any(fnn_forward(net, np.ones(3)))

    def test_identity_linear_layer(self, rng):
        net = FeedforwardNet([4, 4], [np.eye(4)], [np.zeros(4)])
        x = rng.normal(size=(3, 4))
        np.testing.assert_array_equal(net.forward(x), x)

    def test_parameter_count(self):
        assert FeedforwardNet([5, 7, 3]).n_params == 6 * 7 + 8 * 3

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            FeedforwardNet([3, 2]).forward(np.ones(4))

    def test_gradient_matches_fd(self, rng):
        net = FeedforwardNet([3, 2, 1], seed=5)
        X, Y = rng.normal(size=(6, 3)), rng.normal(size=(6, 1))
        _, gW, gb = net.loss_and_grad(X, Y)
        analytic = np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(gW, gb)])
        theta = net.get_flat()
        h = 1e-6
        for k in range(len(theta)):
            tp, tm = theta.copy(), theta.copy()
            tp[k] += h
            tm[k] -= h
            net.set_flat(tp)
            lp = net.loss_and_grad(X, Y)[0]
            net.set_flat(tm)
            lm = net.loss_and_grad(X, Y)[0]
            assert analytic[k] == pytest.approx((lp - lm) / (2 * h), rel=1e-5, abs=1e-10)
        net.set_flat(theta)

    def test_duplicated_data_same_gradient(self, rng):
        net = FeedforwardNet([2, 3, 1], seed=1)
        X, Y = rng.normal(size=(5, 2)), rng.normal(size=(5, 1))
        _, g1, _ = net.loss_and_grad(X, Y)
        _, g2, _ = net.loss_and_grad(np.vstack([X, X]), np.vstack([Y, Y]))
        for a, b in zip(g1, g2):
            np.testing.assert_allclose(a, b, rtol=1e-12)


class TestTraining:
    def test_fits_linear_map(self):
        x = np.linspace(0, 1, 41)[:, None]
        net = FeedforwardNet([1, 8, 1], seed=0)
        fnn_train(net, x, 2 * x, lr=0.1, epochs=20000)
        assert np.abs(net.forward(x) - 2 * x).max() < 0.02

    def test_loss_non_increasing_with_small_step(self, rng):
        x = rng.uniform(0, 1, (30, 2))
        y = x @ np.array([[1.0], [-0.5]])
        losses = fnn_train(FeedforwardNet([2, 1], seed=0), x, y, lr=0.01, epochs=100)
        assert np.all(np.diff(losses) <= 0)

    def test_rejects_bad_input(self):
        net = FeedforwardNet([1, 1])
        with pytest.raises(ValueError):
            fnn_train(net, np.zeros((0, 1)), np.zeros((0, 1)))
        with pytest.raises(ValueError):
            fnn_train(net, np.zeros((2, 1)), np.zeros((2, 1)), lr=0.0)

    def test_divergence_reported(self):
        x = np.linspace(-5, 5, 20)[:, None]
        with pytest.raises(FloatingPointError, match="non-finite loss"):
            fnn_train(FeedforwardNet([1, 1], seed=0), x, 1e3 * x, lr=50.0, epochs=200)

    def test_deterministic(self):
        data = _synthetic_pairs()
        m1, _ = train_error_model(data, hidden=(8,), epochs=300, seed=4)
        m2, _ = train_error_model(data, hidden=(8,), epochs=300, seed=4)
        for a, b in zip(m1.net.weights, m2.net.weights):
            np.testing.assert_array_equal(a, b)

    def test_learns_power_law(self):
        model, report = train_error_model(_synthetic_pairs(60), hidden=(16,), lr=0.1, epochs=3000, seed=0)
        assert report.holdout_r2 > 0.9
        assert report.n_train + report.n_holdout == 60

    @pytest.mark.parametrize("mode", ["sequence", "per_step"])
    def test_predictions_non_negative(self, mode, rng):
        model, _ = train_error_model(_synthetic_pairs(), hidden=(4,), epochs=50, mode=mode, log_features=False)
        assert np.all(model.predict(rng.uniform(0, 1, (5, 6))) >= 0)

    def test_needs_two_pairs(self):
        with pytest.raises(ValueError):
            train_error_model(_synthetic_pairs(1))

    def test_training_set_validation(self):
        with pytest.raises(ValueError):
            ErrorTrainingSet(np.ones((2, 3)), np.ones((2, 4)))
        with pytest.raises(ValueError):
            ErrorTrainingSet(-np.ones((2, 3)), np.ones((2, 3)))
        with pytest.raises(ValueError):
            ErrorTrainingSet.from_pairs([])

    def test_json_round_trip(self, tmp_path, rng):
        model, _ = train_error_model(_synthetic_pairs(), hidden=(5,), epochs=100)
        path = tmp_path / "est.json"
        model.save(path)
        again = ErrorModel.load(path)
        x = rng.uniform(0.01, 0.1, (3, 6))
        np.testing.assert_array_equal(model.predict(x), again.predict(x))


class TestMetrics:
    def test_perfect(self):
        rmse, r2 = regression_metrics([1, 2, 3], [1, 2, 3])
        assert rmse == 0.0 and r2 == 1.0

    def test_mean_predictor(self):
        assert regression_metrics([1, 2, 3, 6], [3, 3, 3, 3])[1] == pytest.approx(0.0)

    def test_constant_offset(self):
        assert regression_metrics([0, 1, 2, 3], [0.5, 1.5, 2.5, 3.5])[0] == pytest.approx(0.5)

    def test_constant_truth_is_undefined(self):
        assert np.isnan(regression_metrics([2, 2, 2], [1, 2, 3])[1])

    def test_length_checks(self):
        with pytest.raises(ValueError):
            regression_metrics([1], [1])
        with pytest.raises(ValueError):
            regression_metrics([1, 2], [1, 2, 3])


class TestGainBaseline:
    def test_gain_from_pair(self):
        assert gain_from_pair([1.0, 2.0, 0.0], [0.5, 3.0, 0.0]) == pytest.approx(1.5)
        assert gain_from_pair([0.0], [1.0]) == np.inf

    def test_exact_match_uses_its_gain(self):
        t = GainTable()
        t.add(np.zeros(3), 1.0)
        t.add(np.ones(3), 4.0)
        np.testing.assert_allclose(gain_baseline_estimate(t, np.ones(3), [1.0, 2.0]), [4.0, 8.0])

    def test_ties_pick_first(self):
        t = GainTable()
        t.add([0.0, 1.0], 2.0)
        t.add([1.0, 0.0], 3.0)
        assert t.nearest([0.5, 0.5]) == 0

    def test_zero_gain(self):
        t = GainTable()
        t.add([0.2], 0.0)
        assert not np.any(gain_baseline_estimate(t, [0.9], [1.0, 5.0]))

    def test_invalid(self):
        with pytest.raises(ValueError):
            GainTable().nearest([0.0])
        with pytest.raises(ValueError):
            GainTable().add([0.0], -1.0)

    def test_bounds_stored_samples(self, make_cantilever):
        p = make_cantilever(16, 8, 30)
        rng = np.random.default_rng(2)
        samples = [rng.uniform(0.3, 0.9, p.n_elements) for _ in range(6)]
        res = greedy_offline(p, samples, max_basis=3)
        table = GainTable()
        for k, b in enumerate(samples):
            table.add(b, max(g for j, g in res.gains if j == k))
        for b in samples:
            an = p.analyze(b)
            red = project_operators(an.system, an.eff, res.basis)
            S = solve_adjoint_reduced(red, an.partials, p.grid, p.hht).lifted
            R = compute_residuals(an.system, an.eff, S, an.partials, p.grid, p.hht).norms
            e = true_error_norms(p.adjoint(an), S)
            assert np.all(gain_baseline_estimate(table, b, R) >= e * (1 - 1e-9))
