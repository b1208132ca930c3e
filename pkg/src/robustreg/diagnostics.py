"""Theory-side instruments: subset eigenvalue extremes, the contraction
margin certificate, the closed-form breakdown fraction, and the paired
solver-error trace used to probe the reweighting advantage."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from math import comb

import numpy as np

from .core import Dataset, hard_threshold, penalized_least_squares
from .errors import InvalidArgumentError
from .priors import PenaltyMatrix, WeightPrior, prior_from_penalty
from .trip import _as_penalty_array, default_tolerance
from .vbem import vbem_fit

__all__ = [
    "SubsetEigenBounds",
    "ssc_sss",
    "convergence_margin",
    "breakdown_bound",
    "Assumption1Trace",
    "assumption1_trace",
]

_EXACT_N_LIMIT = 25

# Constants of the quadratic approximation behind the breakdown fraction.
_BD_OFFSET = 0.3023
_BD_RADICAND = 0.0887
_BD_SLOPE = 0.0040
_XI_MAX = _BD_RADICAND / _BD_SLOPE


@dataclass(frozen=True)
class SubsetEigenBounds:
    """Extreme eigenvalues of X_S X_S^T over size-m column subsets."""

    lambda_m: float
    big_lambda_m: float
    exact: bool


def _subset_extremes(x: np.ndarray, subsets) -> tuple[float, float]:
    lam = np.inf
    big = -np.inf
    for s in subsets:
        xs = x[:, list(s)]
        eigs = np.linalg.eigvalsh(xs @ xs.T)
        lam = min(lam, eigs[0])
        big = max(big, eigs[-1])
    return float(lam), float(big)


def ssc_sss(data: Dataset, m: int, *, allow_sampling: bool = False,
            n_samples: int = 100_000, rng_seed: int = 0) -> SubsetEigenBounds:
    """Smallest lambda_min and largest lambda_max of X_S X_S^T over all
    size-m subsets S of the columns.

    Exhaustive enumeration is limited to n <= 25; larger instances must opt
    into `allow_sampling`, which checks random subsets and is flagged
    approximate (it enumerates exhaustively whenever the subset count fits
    inside the sampling budget, so it never claims sharper extremes than
    exact mode on an instance where both can run).
    """
    n = data.n
    if not 1 <= m <= n:
        raise InvalidArgumentError(f"subset size m={m} outside [1, {n}]")
    total = comb(n, m)
    if n <= _EXACT_N_LIMIT or total <= n_samples:
        lam, big = _subset_extremes(data.x, combinations(range(n), m))
        return SubsetEigenBounds(lam, big, exact=True)
    if not allow_sampling:
        raise InvalidArgumentError(
            f"exhaustive subset enumeration needs n <= {_EXACT_N_LIMIT} "
            f"(n={n}); pass allow_sampling=True for approximate bounds")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence((rng_seed,))))
    subsets = (rng.choice(n, size=m, replace=False) for _ in range(n_samples))
    lam, big = _subset_extremes(data.x, subsets)
    return SubsetEigenBounds(lam, big, exact=False)


def convergence_margin(data: Dataset, penalty, k: int, k_star: int,
                       **kwargs) -> float:
    """2 Lambda_{k + k*} / lambda_min(X X^T + M); below 1 certifies the
    geometric contraction of the thresholding iteration."""
    if k < 0 or k_star < 0:
        raise InvalidArgumentError("k and k_star must be nonnegative")
    level = k + k_star
    if not 1 <= level <= data.n:
        raise InvalidArgumentError(f"k + k_star = {level} outside [1, {data.n}]")
    m = _as_penalty_array(penalty, data.d)
    bounds = ssc_sss(data, level, **kwargs)
    lam_min = float(np.linalg.eigvalsh(data.x @ data.x.T + m)[0])
    if lam_min <= 0:
        raise InvalidArgumentError("X X^T + M must be positive definite")
    return 2.0 * bounds.big_lambda_m / lam_min


def breakdown_bound(xi: float) -> float:
    """Largest tolerable corruption fraction as a function of the scaled
    penalty floor xi = lim lambda_min(M) / n.

    Monotone increasing on [0, 22.175], reaching 0.3023 when the radicand
    vanishes.
    """
    if not 0.0 <= xi <= _XI_MAX:
        raise InvalidArgumentError(f"xi={xi} outside [0, {_XI_MAX}]")
    radicand = _BD_RADICAND - _BD_SLOPE * xi
    if radicand < 0.0:  # float fuzz at the right endpoint
        radicand = 0.0
    return _BD_OFFSET - float(np.sqrt(radicand))


@dataclass(frozen=True)
class Assumption1Trace:
    """Paired per-iteration solver errors on the union support.

    u1 follows the variational reweighted solution, u2 the penalized
    least-squares solution of the same subproblem; their ratio measures how
    much the reweighting shrinks the error the thresholding step sees.
    """

    u1: np.ndarray
    u2: np.ndarray
    ratio: np.ndarray
    gamma_max: float
    ratio_mean: float
    iterations: int
    converged: bool


def assumption1_trace(data: Dataset, w_star, epsilon, record, penalty,
                      w0, l: float, weight_prior: WeightPrior, sigma2: float,
                      k: int, tol: float | None = None, max_iter: int = 100,
                      vbem_tol: float = 1e-6, vbem_max_iter: int = 50
                      ) -> Assumption1Trace:
    """Run the reweighted thresholding iteration on a synthetic instance and
    record, at every outer step, the error of the variational solution and
    of the penalized least-squares solution on the union of the estimated
    and true corruption supports.

    Requires the ground truth (w_star, epsilon, and the corruption record),
    so it only applies to synthetic data. The coefficient prior is paired
    with the penalty through Sigma0 = l * sigma2 * M^{-1}.
    """
    if w_star is None or epsilon is None or record is None:
        raise InvalidArgumentError("ground truth (w_star, epsilon, record) required")
    x, y = data.x, data.y
    n = data.n
    w_star = np.asarray(w_star, dtype=float).ravel()
    epsilon = np.asarray(epsilon, dtype=float).ravel()
    if epsilon.shape[0] != n:
        raise InvalidArgumentError("epsilon must have one entry per sample")
    if l <= 0:
        raise InvalidArgumentError("prior shrinkage l must be positive")
    m = _as_penalty_array(penalty, data.d)
    coef_prior = prior_from_penalty(PenaltyMatrix(m), l * sigma2, np.asarray(w0, float))
    if tol is None:
        tol = default_tolerance(y)
    true_support = set(int(i) for i in record.b_true.support)

    b = np.zeros(n)
    u1_list, u2_list = [], []
    post = None
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        shifted = Dataset(x, y - b)
        post = vbem_fit(shifted, weight_prior, coef_prior, sigma2,
                        tol=vbem_tol, max_iter=vbem_max_iter, init=post)
        w1 = post.w_mean
        w2 = penalized_least_squares(shifted, m, np.asarray(w0, float))

        union = np.asarray(sorted(true_support | set(np.flatnonzero(b))), dtype=int)
        eps_u = epsilon[union]
        xu = x[:, union]
        u1_list.append(float(np.linalg.norm(eps_u + xu.T @ (w_star - w1))))
        u2_list.append(float(np.linalg.norm(eps_u + xu.T @ (w_star - w2))))

        bc = hard_threshold(y - x.T @ w1, k)
        delta = float(np.linalg.norm(bc.values - b))
        b = bc.values
        if delta <= tol:
            converged = True
            break

    u1 = np.asarray(u1_list)
    u2 = np.asarray(u2_list)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where((u1 == 0) & (u2 == 0), 1.0, u1 / u2)
    return Assumption1Trace(u1=u1, u2=u2, ratio=ratio,
                            gamma_max=float(ratio.max()),
                            ratio_mean=float(ratio.mean()),
                            iterations=it, converged=converged)
