"""Coefficient and per-sample weight priors, and data-driven prior building.

The Gaussian coefficient prior N(w0, Sigma0) enters the estimators only
through its penalty matrix M = sigma^2 * Sigma0^{-1}. Weight priors are any
nonnegative-support family; the Gamma family has closed-form tilted
posteriors, the others are handled by deterministic adaptive quadrature.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize
from scipy.linalg import cho_factor, cho_solve
from scipy.stats import beta as beta_dist
from scipy.stats import chi2, gamma as gamma_dist, lognorm

from .core import Dataset, ols
from .errors import (
    InvalidArgumentError,
    InvalidHyperparameterError,
    NumericError,
    SingularMatrixError,
)

__all__ = [
    "CoefficientPrior",
    "PenaltyMatrix",
    "WeightPrior",
    "GammaWeightPrior",
    "LogNormalWeightPrior",
    "BetaWeightPrior",
    "penalty_from_prior",
    "prior_from_penalty",
    "check_weight_hyperparams",
    "min_weight_rate",
    "LadFit",
    "lad_fit",
    "data_driven_prior",
    "prior_to_json",
    "prior_from_json",
]

_SYM_TOL = 1e-12


def _check_psd(a: np.ndarray, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidArgumentError(f"{name} must be square")
    scale = max(1.0, float(np.abs(a).max()))
    if np.abs(a - a.T).max() > _SYM_TOL * scale:
        raise InvalidArgumentError(f"{name} is not symmetric")
    eigs = np.linalg.eigvalsh(a)
    if eigs[0] < -1e-10 * max(1.0, eigs[-1]):
        raise InvalidArgumentError(f"{name} is not positive semidefinite")
    return 0.5 * (a + a.T)


@dataclass(frozen=True)
class CoefficientPrior:
    """Gaussian prior on the regression coefficients: mean and covariance."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).ravel()
        cov = _check_psd(self.covariance, "covariance")
        if cov.shape[0] != mean.shape[0]:
            raise InvalidArgumentError("mean and covariance dimensions differ")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def d(self) -> int:
        return self.mean.shape[0]

    @staticmethod
    def isotropic(mean: np.ndarray, scale: float) -> "CoefficientPrior":
        mean = np.asarray(mean, dtype=float).ravel()
        if scale <= 0:
            raise InvalidArgumentError("isotropic scale must be positive")
        return CoefficientPrior(mean, scale * np.eye(mean.shape[0]))


@dataclass(frozen=True)
class PenaltyMatrix:
    """Positive semidefinite quadratic penalty on coefficient deviation."""

    m: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "m", _check_psd(self.m, "penalty matrix"))

    @property
    def d(self) -> int:
        return self.m.shape[0]

    @staticmethod
    def zero(d: int) -> "PenaltyMatrix":
        return PenaltyMatrix(np.zeros((d, d)))


def penalty_from_prior(prior: CoefficientPrior, sigma2: float) -> PenaltyMatrix:
    """M = sigma^2 * Sigma0^{-1}, the penalty induced by the Gaussian prior."""
    if sigma2 <= 0:
        raise InvalidArgumentError("sigma2 must be positive")
    try:
        factor = cho_factor(prior.covariance, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError("prior covariance is singular",
                                  cond=float(np.linalg.cond(prior.covariance))) from exc
    m = cho_solve(factor, sigma2 * np.eye(prior.d), check_finite=False)
    return PenaltyMatrix(0.5 * (m + m.T))


def prior_from_penalty(penalty: PenaltyMatrix, sigma2: float,
                       mean: np.ndarray) -> CoefficientPrior:
    """Inverse of penalty_from_prior: Sigma0 = sigma^2 * M^{-1}."""
    if sigma2 <= 0:
        raise InvalidArgumentError("sigma2 must be positive")
    try:
        factor = cho_factor(penalty.m, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SingularMatrixError("penalty matrix is singular",
                                  cond=float(np.linalg.cond(penalty.m))) from exc
    cov = cho_solve(factor, sigma2 * np.eye(penalty.d), check_finite=False)
    return CoefficientPrior(np.asarray(mean, dtype=float), 0.5 * (cov + cov.T))


# ---------------------------------------------------------------------------
# Weight priors


class WeightPrior:
    """Prior over a per-sample likelihood weight r >= 0.

    Subclasses provide the log density, the prior mean, the support, and the
    moments of the tilted posterior q(r) proportional to p(r) * exp(c * r).
    """

    support = (0.0, np.inf)

    def logpdf(self, r):
        raise NotImplementedError

    def prior_mean(self) -> float:
        raise NotImplementedError

    def tilted_mean(self, c: float) -> float:
        """E[r] under q(r) ~ p(r) exp(c r)."""
        return self._quadrature_moments(c)[0]

    def tilted_mode(self, c: float) -> float:
        """Argmax of log p(r) + c r over the support."""
        lo, hi = self._finite_support(c)
        grid = np.linspace(lo + 1e-12 * (hi - lo), hi - 1e-12 * (hi - lo), 513)
        vals = self.logpdf(grid) + c * grid
        r0 = grid[int(np.argmax(vals))]
        span = (hi - lo) / 512
        res = optimize.minimize_scalar(
            lambda r: -(self.logpdf(r) + c * r),
            bounds=(max(lo, r0 - span), min(hi, r0 + span)),
            method="bounded",
        )
        return float(res.x)

    def _finite_support(self, c: float):
        lo, hi = self.support
        if not np.isfinite(hi):
            raise NotImplementedError
        return lo, hi

    def _quadrature_moments(self, c: float, epsrel: float = 1e-10):
        lo, hi = self._finite_support(c)
        grid = np.linspace(lo, hi, 2049)
        with np.errstate(divide="ignore", invalid="ignore"):
            logf = self.logpdf(grid) + c * grid
        peak = float(np.nanmax(logf[np.isfinite(logf)]))

        def f0(r):
            return np.exp(self.logpdf(r) + c * r - peak)

        z0, e0 = integrate.quad(f0, lo, hi, epsrel=epsrel, limit=200)
        z1, e1 = integrate.quad(lambda r: r * f0(r), lo, hi, epsrel=epsrel, limit=200)
        if z0 <= 0 or e0 > 1e-8 * z0 or e1 > 1e-8 * max(abs(z1), 1e-300):
            raise NumericError("tilted-posterior quadrature did not converge")
        return z1 / z0, z0


@dataclass(frozen=True)
class GammaWeightPrior(WeightPrior):
    """Gamma(shape, rate) weight prior; tilted posteriors stay Gamma."""

    shape: float
    rate: float

    def __post_init__(self):
        if self.shape <= 0 or self.rate <= 0:
            raise InvalidArgumentError("Gamma parameters must be positive")

    def logpdf(self, r):
        return gamma_dist.logpdf(r, a=self.shape, scale=1.0 / self.rate)

    def prior_mean(self) -> float:
        return self.shape / self.rate

    def tilted_mean(self, c: float) -> float:
        if self.rate - c <= 0:
            raise InvalidHyperparameterError(
                f"tilt {c} makes the Gamma posterior improper (rate {self.rate})"
            )
        return self.shape / (self.rate - c)

    def tilted_mode(self, c: float) -> float:
        if self.rate - c <= 0:
            raise InvalidHyperparameterError(
                f"tilt {c} makes the Gamma posterior improper (rate {self.rate})"
            )
        return max(self.shape - 1.0, 0.0) / (self.rate - c)

    def _finite_support(self, c: float):
        # upper cutoff where the tilted density mass is numerically exhausted
        hi = gamma_dist.ppf(1.0 - 1e-14, a=self.shape, scale=1.0 / max(self.rate - c, 1e-12))
        return 0.0, float(hi)


@dataclass(frozen=True)
class LogNormalWeightPrior(WeightPrior):
    """log N(mu, tau^2) weight prior; tilted moments by quadrature."""

    mu: float
    tau: float

    def __post_init__(self):
        if self.tau <= 0:
            raise InvalidArgumentError("tau must be positive")

    def logpdf(self, r):
        return lognorm.logpdf(r, s=self.tau, scale=np.exp(self.mu))

    def prior_mean(self) -> float:
        return float(np.exp(self.mu + 0.5 * self.tau**2))

    def _finite_support(self, c: float):
        if c > 0:
            # exp(c r) outgrows the log-normal tail: improper posterior
            raise InvalidHyperparameterError(
                "positive likelihood tilt with log-normal weight prior"
            )
        hi = lognorm.ppf(1.0 - 1e-12, s=self.tau, scale=np.exp(self.mu))
        return 0.0, float(hi)


@dataclass(frozen=True)
class BetaWeightPrior(WeightPrior):
    """Beta(a, b) weight prior on [0, 1]."""

    a: float
    b: float
    support = (0.0, 1.0)

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise InvalidArgumentError("Beta parameters must be positive")

    def logpdf(self, r):
        return beta_dist.logpdf(r, self.a, self.b)

    def prior_mean(self) -> float:
        return self.a / (self.a + self.b)

    def _finite_support(self, c: float):
        return 0.0, 1.0


# ---------------------------------------------------------------------------
# Hyperparameter rule for the Gamma weight prior

def _tilt_constants(sigma2: float):
    """Log-likelihood tilts of a perfectly fitting and a barely plausible point.

    c1 is the log density of a zero residual; c2 subtracts half the 0.95
    chi-square(1) quantile, the largest squared standardized residual an
    uncorrupted point shows with 95% probability.
    """
    if sigma2 <= 0:
        raise InvalidArgumentError("sigma2 must be positive")
    c1 = -0.5 * np.log(2.0 * np.pi * sigma2)
    c2 = c1 - 0.5 * float(chi2.ppf(0.95, df=1))
    return c1, c2


def check_weight_hyperparams(prior: GammaWeightPrior, sigma2: float,
                             beta: float) -> tuple[bool, float]:
    """Check that a barely plausible point keeps at least beta of the weight
    a perfect point gets, under the Gamma closed-form tilted posteriors.

    Returns (passes, ratio) with ratio = E_q2[r] / E_q1[r].
    """
    if not isinstance(prior, GammaWeightPrior):
        raise InvalidArgumentError("closed-form check requires a Gamma prior")
    if not 0.0 < beta < 1.0:
        raise InvalidArgumentError("beta must lie in (0, 1)")
    c1, c2 = _tilt_constants(sigma2)
    if prior.rate <= max(c1, c2):
        raise InvalidHyperparameterError(
            f"rate {prior.rate} <= {max(c1, c2):.6f}: tilted posterior improper"
        )
    ratio = prior.tilted_mean(c2) / prior.tilted_mean(c1)
    return bool(ratio >= beta), float(ratio)


def min_weight_rate(sigma2: float, beta: float) -> float:
    """Smallest Gamma rate b_r meeting the ratio rule with equality.

    The ratio (b_r - c1)/(b_r - c2) is increasing in b_r and independent of
    the shape, so the floor solves (b_r - c1) = beta (b_r - c2).
    """
    if not 0.0 < beta < 1.0:
        raise InvalidArgumentError("beta must lie in (0, 1)")
    c1, c2 = _tilt_constants(sigma2)
    return float((c1 - beta * c2) / (1.0 - beta))


# ---------------------------------------------------------------------------
# LAD regression and the data-driven prior

@dataclass(frozen=True)
class LadFit:
    """Least-absolute-deviation fit result."""

    w: np.ndarray
    objective: float
    objective_trace: np.ndarray
    iterations: int
    converged: bool


def lad_fit(data: Dataset, tol: float = 1e-10, max_iter: int = 500) -> LadFit:
    """Minimize sum |y_i - x_i^T w| by iteratively reweighted least squares.

    Residual magnitudes are floored at eps = 1e-6 * (1 + max|y|) when forming
    the weights. The returned objective trace is nonincreasing: a step that
    fails to improve terminates the iteration at the incumbent.
    """
    if data.d > data.n:
        raise InvalidArgumentError("LAD requires d <= n")
    x, y = data.x, data.y
    eps = 1e-6 * (1.0 + float(np.abs(y).max()))
    w = ols(data)
    obj = float(np.abs(y - x.T @ w).sum())
    trace = [obj]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        r = y - x.T @ w
        wts = 1.0 / np.maximum(np.abs(r), eps)
        xw = x * wts
        try:
            factor = cho_factor(xw @ x.T, lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise SingularMatrixError("weighted LAD system is singular") from exc
        w_new = cho_solve(factor, xw @ y, check_finite=False)
        obj_new = float(np.abs(y - x.T @ w_new).sum())
        if obj_new > obj:
            # at the smoothing floor; keep the incumbent
            converged = True
            break
        improved = obj - obj_new
        w, obj = w_new, obj_new
        trace.append(obj)
        if improved <= tol * max(1.0, obj):
            converged = True
            break
    return LadFit(w=w, objective=obj, objective_trace=np.asarray(trace),
                  iterations=it, converged=converged)


def data_driven_prior(data: Dataset, s_grid, folds: int, rng_seed: int, *,
                      sigma2: float = 1.0, assumed_corruption: float = 0.3,
                      tol: float | None = None, max_iter: int = 200) -> CoefficientPrior:
    """Build a coefficient prior from the data itself.

    The mean is the LAD solution; the isotropic covariance scale s is picked
    from s_grid by k-fold cross validation of the downstream penalized
    hard-thresholding fit, scored by trimmed held-out squared residuals
    (trim fraction = assumed corruption) so outliers cannot drive the choice.
    Fold assignment is deterministic given rng_seed.
    """
    from .trip import trip_fit  # local import to avoid a module cycle

    s_grid = sorted(float(s) for s in s_grid)
    if not s_grid:
        raise InvalidArgumentError("s_grid must be nonempty")
    if any(s <= 0 for s in s_grid):
        raise InvalidArgumentError("covariance scales must be positive")
    lad = lad_fit(data)
    if len(s_grid) == 1:
        return CoefficientPrior.isotropic(lad.w, s_grid[0])
    if folds < 2:
        raise InvalidArgumentError("folds must be >= 2")

    n, d = data.n, data.d
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((int(rng_seed),))))
    fold_id = rng.permutation(n) % folds
    eye = np.eye(d)

    scores = []
    for s in s_grid:
        m = PenaltyMatrix((sigma2 / s) * eye)
        fold_scores = []
        for f in range(folds):
            train = fold_id != f
            test = ~train
            train_data = Dataset(data.x[:, train], data.y[train])
            k = int(round(assumed_corruption * train_data.n))
            report = trip_fit(train_data, m, lad.w, k, tol=tol, max_iter=max_iter)
            r2 = (data.y[test] - data.x[:, test].T @ report.w_hat) ** 2
            keep = max(1, int(np.ceil((1.0 - assumed_corruption) * r2.size)))
            fold_scores.append(float(np.mean(np.sort(r2)[:keep])))
        scores.append(float(np.mean(fold_scores)))
    best = s_grid[int(np.argmin(scores))]
    return CoefficientPrior.isotropic(lad.w, best)


# ---------------------------------------------------------------------------
# Serialization

def prior_to_json(prior: CoefficientPrior) -> str:
    """Serialize a coefficient prior; isotropic covariances store one scale."""
    cov = prior.covariance
    s = cov[0, 0]
    if np.allclose(cov, s * np.eye(prior.d), rtol=0, atol=1e-14 * max(1.0, abs(s))):
        payload = {"mean": [float(v) for v in prior.mean],
                   "covariance_scale": float(s)}
    else:
        payload = {"mean": [float(v) for v in prior.mean],
                   "covariance": [[float(v) for v in row] for row in cov]}
    return json.dumps(payload, sort_keys=True)


def prior_from_json(text: str) -> CoefficientPrior:
    payload = json.loads(text)
    mean = np.asarray(payload["mean"], dtype=float)
    if "covariance_scale" in payload:
        return CoefficientPrior.isotropic(mean, float(payload["covariance_scale"]))
    return CoefficientPrior(mean, np.asarray(payload["covariance"], dtype=float))
