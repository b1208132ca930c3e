"""Variational EM for the per-sample reweighted Gaussian regression model.

Each response carries a latent nonnegative weight r_i that exponentiates its
likelihood term. The factorized approximation q(w) q(r) alternates:

  E step: q(r_i) ~ p_r(r_i) exp(r_i * t_i) with t_i the expected per-point
          Gaussian log likelihood under q(w); Gamma priors stay Gamma with
          shape a_r and rate b_r - t_i, other families go through quadrature.
  M step: q(w) = N(w_N, V_N) with V_N^{-1} = X E_r X^T / sigma^2 + Sigma0^{-1}
          and w_N = V_N (X E_r y / sigma^2 + Sigma0^{-1} w0).

The point estimate is w_N. The noise level sigma^2 is a fixed configuration
parameter throughout, never estimated.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .core import Dataset, _spd_factor
from .errors import InvalidArgumentError, InvalidHyperparameterError, SingularMatrixError
from .priors import CoefficientPrior, GammaWeightPrior, WeightPrior

__all__ = [
    "VariationalPosterior",
    "expected_log_lik",
    "e_step",
    "m_step",
    "vbem_fit",
]


@dataclass(frozen=True)
class VariationalPosterior:
    """Factorized posterior state: Gaussian q(w) and per-point weight tilts.

    `tilt[i]` is the expected log likelihood of point i under q(w); for a
    Gamma(a_r, b_r) weight prior the weight posterior is Gamma(a_r,
    b_r - tilt[i]) and `weight_expect[i]` its mean.
    """

    w_mean: np.ndarray
    w_cov: np.ndarray
    weight_expect: np.ndarray
    tilt: np.ndarray
    iterations: int = 0
    converged: bool = True

    def gamma_params(self, prior: GammaWeightPrior):
        """Per-point (shape, rate) of the Gamma weight posteriors."""
        a = np.full_like(self.tilt, prior.shape)
        return a, prior.rate - self.tilt

    def map_weights(self, prior: WeightPrior) -> np.ndarray:
        """Per-point posterior modes of the weights."""
        if isinstance(prior, GammaWeightPrior):
            return np.maximum(prior.shape - 1.0, 0.0) / (prior.rate - self.tilt)
        return np.array([prior.tilted_mode(c) for c in self.tilt])


def expected_log_lik(y_i: float, x_i: np.ndarray, post: VariationalPosterior,
                     sigma2: float) -> float:
    """Expected Gaussian log likelihood of one point under q(w).

    Always at most the zero-residual value -log(2 pi sigma^2) / 2.
    """
    if sigma2 <= 0:
        raise InvalidArgumentError("sigma2 must be positive")
    x_i = np.asarray(x_i, dtype=float).ravel()
    resid = float(y_i) - float(post.w_mean @ x_i)
    quad = float(x_i @ post.w_cov @ x_i)
    return -0.5 * (resid**2 + quad) / sigma2 - 0.5 * np.log(2.0 * np.pi * sigma2)


def _expected_log_lik_all(data: Dataset, w_mean, w_cov, sigma2: float) -> np.ndarray:
    resid = data.y - data.x.T @ w_mean
    quad = np.einsum("ij,ij->i", data.x.T @ w_cov, data.x.T)
    return -0.5 * (resid**2 + quad) / sigma2 - 0.5 * np.log(2.0 * np.pi * sigma2)


def e_step(data: Dataset, post: VariationalPosterior, prior: WeightPrior,
           sigma2: float, *, force_quadrature: bool = False) -> VariationalPosterior:
    """Refresh the weight posteriors for the current q(w)."""
    if sigma2 <= 0:
        raise InvalidArgumentError("sigma2 must be positive")
    tilt = _expected_log_lik_all(data, post.w_mean, post.w_cov, sigma2)
    if isinstance(prior, GammaWeightPrior) and not force_quadrature:
        rates = prior.rate - tilt
        if np.any(rates <= 0):
            bad = int(np.argmax(rates <= 0))
            raise InvalidHyperparameterError(
                f"point {bad}: expected log likelihood {tilt[bad]:.4f} >= "
                f"Gamma rate {prior.rate}; weight posterior improper"
            )
        expect = prior.shape / rates
    else:
        expect = np.array([prior.tilted_mean(c) for c in tilt])
    return replace(post, weight_expect=expect, tilt=tilt)


def m_step(data: Dataset, weight_expect: np.ndarray, coef_prior: CoefficientPrior,
           sigma2: float):
    """Gaussian coefficient update for fixed weight expectations.

    Returns (w_N, V_N); V_N comes from a factorization of its inverse.
    """
    if sigma2 <= 0:
        raise InvalidArgumentError("sigma2 must be positive")
    weight_expect = np.asarray(weight_expect, dtype=float).ravel()
    if weight_expect.shape[0] != data.n:
        raise InvalidArgumentError("one weight expectation per sample required")
    if np.any(weight_expect < 0):
        raise InvalidArgumentError("weight expectations must be nonnegative")
    try:
        prior_factor = cho_factor(coef_prior.covariance, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError("prior covariance is singular") from exc
    d = data.d
    prior_prec = cho_solve(prior_factor, np.eye(d), check_finite=False)
    prior_prec = 0.5 * (prior_prec + prior_prec.T)

    xw = data.x * weight_expect
    prec = xw @ data.x.T / sigma2 + prior_prec
    factor = _spd_factor(prec, "posterior precision")
    w_n = cho_solve(factor, xw @ data.y / sigma2 + prior_prec @ coef_prior.mean,
                    check_finite=False)
    v_n = cho_solve(factor, np.eye(d), check_finite=False)
    return w_n, 0.5 * (v_n + v_n.T)


def vbem_fit(data: Dataset, weight_prior: WeightPrior, coef_prior: CoefficientPrior,
             sigma2: float, tol: float = 1e-6, max_iter: int = 100,
             init: VariationalPosterior | None = None,
             force_quadrature: bool = False) -> VariationalPosterior:
    """Alternate the E and M updates until the coefficient mean stalls.

    Starts from the prior (w_N = w0, V_N = Sigma0, weights at the prior
    mean) unless a warm-start posterior is supplied. Non-convergence within
    max_iter is flagged on the returned posterior.
    """
    if init is None:
        post = VariationalPosterior(
            w_mean=coef_prior.mean.copy(),
            w_cov=coef_prior.covariance.copy(),
            weight_expect=np.full(data.n, weight_prior.prior_mean()),
            tilt=np.zeros(data.n),
        )
    else:
        post = init
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        post = e_step(data, post, weight_prior, sigma2,
                      force_quadrature=force_quadrature)
        w_n, v_n = m_step(data, post.weight_expect, coef_prior, sigma2)
        change = float(np.linalg.norm(w_n - post.w_mean))
        post = replace(post, w_mean=w_n, w_cov=v_n)
        if change <= tol:
            converged = True
            break
    return replace(post, iterations=it, converged=converged)
