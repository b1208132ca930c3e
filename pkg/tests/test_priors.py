import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog
from scipy.stats import chi2

from robustreg.core import Dataset, ols
from robustreg.errors import (
    InvalidArgumentError,
    InvalidHyperparameterError,
    SingularMatrixError,
)
from robustreg.priors import (
    CoefficientPrior,
    GammaWeightPrior,
    PenaltyMatrix,
    check_weight_hyperparams,
    data_driven_prior,
    lad_fit,
    min_weight_rate,
    penalty_from_prior,
    prior_from_json,
    prior_from_penalty,
    prior_to_json,
)


def lad_lp_oracle(data: Dataset) -> np.ndarray:
    """LAD as a linear program: min sum(u + v) s.t. y - X^T w = u - v."""
    n, d = data.n, data.d
    # variables: w (free, split into w+ - w-), u, v
    c = np.concatenate([np.zeros(2 * d), np.ones(2 * n)])
    a_eq = np.hstack([data.x.T, -data.x.T, np.eye(n), -np.eye(n)])
    res = linprog(c, A_eq=a_eq, b_eq=data.y, method="highs")
    assert res.success
    return res.x[:d] - res.x[d:2 * d]


class TestCoefficientPrior:
    def test_rejects_asymmetric(self):
        with pytest.raises(InvalidArgumentError):
            CoefficientPrior(np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]))

    def test_rejects_indefinite(self):
        with pytest.raises(InvalidArgumentError):
            CoefficientPrior(np.zeros(2), np.array([[1.0, 0.0], [0.0, -1.0]]))


class TestPenaltyFromPrior:
    def test_identity(self):
        prior = CoefficientPrior(np.zeros(3), np.eye(3))
        assert np.allclose(penalty_from_prior(prior, 1.0).m, np.eye(3))

    def test_experiment_scale(self):
        # Sigma0 = (1 / (0.05 n)) I with n=1000 gives M = 50 I
        n = 1000
        prior = CoefficientPrior.isotropic(np.zeros(4), 1.0 / (0.05 * n))
        assert np.allclose(penalty_from_prior(prior, 1.0).m, 50.0 * np.eye(4))

    def test_diagonal_oracle(self):
        rng = np.random.default_rng(2)
        diag = rng.uniform(0.5, 3.0, size=5)
        prior = CoefficientPrior(np.zeros(5), np.diag(diag))
        m = penalty_from_prior(prior, 2.0).m
        assert np.allclose(np.diag(m), 2.0 / diag)
        assert np.allclose(m - np.diag(np.diag(m)), 0.0)

    def test_round_trip(self):
        rng = np.random.default_rng(8)
        a = rng.standard_normal((4, 4))
        cov = a @ a.T + 0.5 * np.eye(4)
        prior = CoefficientPrior(rng.standard_normal(4), cov)
        penalty = penalty_from_prior(prior, 1.7)
        back = prior_from_penalty(penalty, 1.7, prior.mean)
        assert np.linalg.norm(back.covariance - cov) < 1e-8

    def test_singular_covariance(self):
        prior = CoefficientPrior(np.zeros(2), np.zeros((2, 2)))
        with pytest.raises(SingularMatrixError):
            penalty_from_prior(prior, 1.0)


class TestWeightHyperparams:
    def test_reference_ratio(self):
        ok, ratio = check_weight_hyperparams(GammaWeightPrior(4, 10), 1.0, 0.5)
        # independent recomputation: ratio = (b - c1) / (b - c2)
        c1 = -0.5 * np.log(2 * np.pi)
        c2 = c1 - 0.5 * chi2.ppf(0.95, df=1)
        expected = (10 - c1) / (10 - c2)
        assert ok
        assert abs(ratio - expected) < 1e-12
        assert abs(ratio - 0.850) < 5e-4

    def test_tiny_beta_always_passes(self):
        ok, ratio = check_weight_hyperparams(GammaWeightPrior(4, 10), 1.0, 1e-9)
        assert ok and ratio > 0

    def test_boundary_rate(self):
        beta = 0.5
        rate = min_weight_rate(1.0, beta)
        ok, ratio = check_weight_hyperparams(GammaWeightPrior(4, rate), 1.0, beta)
        assert abs(ratio - beta) < 1e-10
        assert ok

    def test_improper_posterior_rejected(self):
        # small sigma2 makes the perfect-fit tilt positive and above the rate
        with pytest.raises(InvalidHyperparameterError):
            check_weight_hyperparams(GammaWeightPrior(4, 2.0), 1e-3, 0.5)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(min_value=0.5, max_value=50),
           st.floats(min_value=0.1, max_value=40),
           st.floats(min_value=0.05, max_value=0.95))
    def test_monotone_in_rate(self, rate, bump, beta):
        ok1, r1 = check_weight_hyperparams(GammaWeightPrior(4, rate), 1.0, beta)
        ok2, r2 = check_weight_hyperparams(GammaWeightPrior(4, rate + bump), 1.0, beta)
        assert r2 >= r1 - 1e-12
        if ok1:
            assert ok2


class TestLad:
    def test_clean_data_recovers_truth(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((3, 40))
        w_true = rng.standard_normal(3)
        fit = lad_fit(Dataset(x, x.T @ w_true))
        assert np.linalg.norm(fit.w - w_true) < 1e-6

    def test_intercept_only_is_median(self):
        data = Dataset(np.ones((1, 3)), np.array([0.0, 0.0, 10.0]))
        fit = lad_fit(data)
        assert abs(fit.w[0]) < 1e-3  # median, not the mean 10/3

    def test_matches_lp_oracle_with_outliers(self):
        rng = np.random.default_rng(13)
        x = rng.standard_normal((2, 30))
        w_true = np.array([1.5, -0.7])
        y = x.T @ w_true + 0.1 * rng.standard_normal(30)
        bad = rng.choice(30, size=6, replace=False)
        y[bad] += rng.uniform(5, 15, size=6)
        data = Dataset(x, y)
        fit = lad_fit(data, tol=1e-14, max_iter=3000)
        oracle = lad_lp_oracle(data)
        assert np.linalg.norm(fit.w - oracle) < 1e-3

    def test_objective_nonincreasing(self):
        rng = np.random.default_rng(17)
        x = rng.standard_normal((3, 50))
        y = x.T @ np.array([1.0, 2.0, -1.0]) + rng.standard_normal(50)
        trace = lad_fit(Dataset(x, y)).objective_trace
        assert np.all(np.diff(trace) <= 1e-10 * np.maximum(1.0, trace[:-1]))

    def test_requires_d_le_n(self):
        with pytest.raises(InvalidArgumentError):
            lad_fit(Dataset(np.ones((3, 2)), np.ones(2)))


class TestDataDrivenPrior:
    def test_single_scale_skips_cv(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((2, 40))
        y = x.T @ np.array([1.0, -1.0]) + 0.1 * rng.standard_normal(40)
        prior = data_driven_prior(Dataset(x, y), [0.3], folds=5, rng_seed=0)
        assert np.allclose(prior.covariance, 0.3 * np.eye(2))

    def test_deterministic(self):
        rng = np.random.default_rng(14)
        x = rng.standard_normal((3, 60))
        y = x.T @ np.array([0.5, 1.0, -2.0]) + rng.standard_normal(60)
        data = Dataset(x, y)
        grid = [0.01, 0.1, 1.0]
        p1 = data_driven_prior(data, grid, folds=4, rng_seed=123)
        p2 = data_driven_prior(data, grid, folds=4, rng_seed=123)
        assert np.array_equal(p1.mean, p2.mean)
        assert np.array_equal(p1.covariance, p2.covariance)

    def test_clean_data_tracks_ols(self):
        from robustreg.trip import trip_fit
        from robustreg.priors import penalty_from_prior as pfp

        rng = np.random.default_rng(19)
        d, n = 4, 200
        x = rng.standard_normal((d, n))
        w_true = rng.standard_normal(d)
        w_true /= np.linalg.norm(w_true)
        y = x.T @ w_true + 0.3 * rng.standard_normal(n)
        data = Dataset(x, y)
        prior = data_driven_prior(data, [0.01, 0.1, 1.0, 10.0], folds=5,
                                  rng_seed=7, assumed_corruption=0.1)
        report = trip_fit(data, pfp(prior, 1.0), prior.mean,
                          k=int(0.1 * n))
        err_trip = np.linalg.norm(report.w_hat - w_true)
        err_ols = np.linalg.norm(ols(data) - w_true)
        assert err_trip <= 2 * err_ols + 1e-9


def test_prior_json_round_trip():
    iso = CoefficientPrior.isotropic(np.array([1.0, 2.0]), 0.5)
    text = prior_to_json(iso)
    assert json.loads(text)["covariance_scale"] == 0.5
    back = prior_from_json(text)
    assert np.array_equal(back.covariance, iso.covariance)

    dense = CoefficientPrior(np.zeros(2), np.array([[2.0, 0.3], [0.3, 1.0]]))
    back2 = prior_from_json(prior_to_json(dense))
    assert np.allclose(back2.covariance, dense.covariance)


def test_penalty_matrix_zero():
    z = PenaltyMatrix.zero(3)
    assert np.array_equal(z.m, np.zeros((3, 3)))
