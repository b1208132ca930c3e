import numpy as np
import pytest
from scipy.stats import multivariate_normal

from robustreg.attacks import adca, oaa
from robustreg.brht import brht_fit, objective_m, objective_u
from robustreg.core import Dataset, ols
from robustreg.errors import InvalidArgumentError
from robustreg.harness import gen_instance
from robustreg.priors import CoefficientPrior, GammaWeightPrior

LOG_2PI = np.log(2.0 * np.pi)


def small_instance(seed=0, n=80, d=3, sigma=0.5):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((d, n))
    w = rng.standard_normal(d)
    w /= np.linalg.norm(w)
    y = x.T @ w + sigma * rng.standard_normal(n)
    return Dataset(x, y), w


class TestObjectives:
    def setup_method(self):
        self.data, self.w_true = small_instance(1, n=14, d=2)
        self.coef_prior = CoefficientPrior(np.array([0.2, -0.1]),
                                           np.array([[0.8, 0.1], [0.1, 0.5]]))
        self.weight_prior = GammaWeightPrior(4, 10)

    def test_empty_set_is_coefficient_prior_only(self):
        w = np.array([0.4, 0.3])
        got = objective_u(self.data, self.weight_prior, self.coef_prior, 1.0,
                          w, np.ones(self.data.n), [])
        ref = multivariate_normal.logpdf(w, self.coef_prior.mean,
                                         self.coef_prior.covariance)
        assert abs(got - ref) < 1e-10

    def test_naive_term_by_term(self):
        rng = np.random.default_rng(2)
        w = rng.standard_normal(2)
        r = rng.uniform(0.05, 1.5, self.data.n)
        s = [1, 4, 9, 13]
        got = objective_u(self.data, self.weight_prior, self.coef_prior, 1.0,
                          w, r, s)
        ref = multivariate_normal.logpdf(w, self.coef_prior.mean,
                                         self.coef_prior.covariance)
        from scipy.stats import gamma as gamma_dist
        for i in s:
            loglik = (-0.5 * (self.data.y[i] - self.data.x[:, i] @ w) ** 2
                      - 0.5 * LOG_2PI)
            ref += gamma_dist.logpdf(r[i], a=4, scale=0.1) + r[i] * loglik
        assert abs(got - ref) < 1e-10

    def test_m_reduces_to_u_on_full_support(self):
        rng = np.random.default_rng(3)
        w = rng.standard_normal(2)
        r = rng.uniform(0.1, 1.0, self.data.n)
        u_full = objective_u(self.data, self.weight_prior, self.coef_prior,
                             1.0, w, r, range(self.data.n))
        m_zero = objective_m(self.data, self.weight_prior, self.coef_prior,
                             1.0, w, r, np.zeros(self.data.n))
        assert abs(u_full - m_zero) < 1e-10

    def test_m_perfect_shift_gives_zero_residual_loglik(self):
        rng = np.random.default_rng(4)
        w = rng.standard_normal(2)
        r = rng.uniform(0.1, 1.0, self.data.n)
        b = self.data.y - self.data.x.T @ w
        got = objective_m(self.data, self.weight_prior, self.coef_prior, 1.0,
                          w, r, b)
        from scipy.stats import gamma as gamma_dist
        ref = multivariate_normal.logpdf(w, self.coef_prior.mean,
                                         self.coef_prior.covariance)
        ref += float(np.sum(gamma_dist.logpdf(r, a=4, scale=0.1)
                            + r * (-0.5 * LOG_2PI)))
        assert abs(got - ref) < 1e-10

    def test_weights_outside_support_rejected(self):
        with pytest.raises(InvalidArgumentError):
            objective_u(self.data, self.weight_prior, self.coef_prior, 1.0,
                        np.zeros(2), -np.ones(self.data.n), [0])


class TestBrhtFit:
    def test_clean_k0_is_ols_one_iteration(self):
        data, _ = small_instance(5)
        prior = CoefficientPrior.isotropic(np.zeros(3), 10.0)
        report, post = brht_fit(data, GammaWeightPrior(4, 10), prior, 1.0, k=0)
        assert report.iterations == 1
        assert np.linalg.norm(report.w_hat - ols(data)) < 1e-8

    def test_monotone_objective_oaa(self):
        data, w_star, w0, _ = gen_instance(300, 10, 1.0, 0.5, 42)
        attacked, _ = oaa(data, 0.25, rng_seed=1)
        prior = CoefficientPrior.isotropic(w0, 1.0 / (0.01 * 300))
        report, _ = brht_fit(attacked, GammaWeightPrior(4, 10), prior, 1.0,
                             k=int(0.3 * 300))
        u = np.asarray(report.u_trace)
        slack = 1e-8 + 1e-6 * np.abs(u[:-1])
        assert np.all(np.diff(u) >= -slack)

    def test_monotone_objective_aaa(self):
        data, w_star, w0, _ = gen_instance(300, 10, 1.0, 0.5, 43)
        attacked, _ = adca(data, w_star, 0.2 * 300, int(0.3 * 300))
        prior = CoefficientPrior.isotropic(w0, 1.0 / (0.04 * 300))
        report, _ = brht_fit(attacked, GammaWeightPrior(4, 10), prior, 1.0,
                             k=int(0.35 * 300))
        u = np.asarray(report.u_trace)
        slack = 1e-8 + 1e-6 * np.abs(u[:-1])
        assert np.all(np.diff(u) >= -slack)

    def test_threshold_exchange_ordering(self):
        # points entering the retained set have no larger residuals (at the
        # current coefficient) than points leaving it
        data, w_star, w0, _ = gen_instance(200, 5, 1.0, 0.5, 44)
        attacked, _ = oaa(data, 0.2, rng_seed=2)
        prior = CoefficientPrior.isotropic(w0, 1.0 / (0.01 * 200))
        report, _ = brht_fit(attacked, GammaWeightPrior(4, 10), prior, 1.0,
                             k=int(0.25 * 200))
        n = attacked.n
        prev_retained = set(range(n))  # S_1 complement of supp(b_0) = all
        for rec, w_t in zip(report.trace, report.w_trace):
            # rec.support is supp(b_{t+1}); S_{t+1} is its complement
            retained = set(range(n)) - set(rec.support)
            resid = np.abs(attacked.y - attacked.x.T @ w_t)
            entering = retained - prev_retained
            leaving = prev_retained - retained
            if entering and leaving:
                assert max(resid[list(entering)]) <= min(resid[list(leaving)]) + 1e-12
            prev_retained = retained

    def test_point_mass_weight_prior_tracks_trip(self):
        from robustreg.priors import penalty_from_prior
        from robustreg.trip import trip_fit

        data, w_star, w0, _ = gen_instance(200, 5, 1.0, 0.5, 45)
        attacked, _ = oaa(data, 0.2, rng_seed=3)
        k = int(0.25 * 200)
        # Gamma(1e6, 1e6): weights pinned at 1, so the inner fit is the
        # penalized solve and the supports should track trip's
        prior = CoefficientPrior.isotropic(w0, 1.0 / (0.05 * 200))
        report_b, _ = brht_fit(attacked, GammaWeightPrior(1e6, 1e6), prior,
                               1.0, k)
        report_t = trip_fit(attacked, penalty_from_prior(prior, 1.0), w0, k)
        n_iter = min(len(report_b.trace), len(report_t.trace))
        agree = sum(report_b.trace[i].support == report_t.trace[i].support
                    for i in range(n_iter))
        assert agree >= 0.95 * n_iter

    def test_k_bounds(self):
        data, _ = small_instance(9)
        prior = CoefficientPrior.isotropic(np.zeros(3), 1.0)
        with pytest.raises(InvalidArgumentError):
            brht_fit(data, GammaWeightPrior(4, 10), prior, 1.0, k=data.n)
