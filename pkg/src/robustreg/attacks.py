"""Ground-truth corruption generators.

Each attack takes a clean dataset, returns the corrupted copy plus a record
holding the true corruption vector, its support, and the parameters that
produced it. All attacks are deterministic functions of (data, params, seed).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, get_lapack_funcs

from .core import Dataset, SparseCorruption, hard_threshold, leverage_scores
from .errors import InvalidArgumentError, UnstableDeltaError
from .trip import default_tolerance

__all__ = [
    "CorruptionRecord",
    "oaa",
    "adca",
    "lpa",
    "record_to_json",
    "record_from_json",
]


@dataclass(frozen=True)
class CorruptionRecord:
    """Provenance of a planted corruption: vector, support, parameters."""

    b_true: SparseCorruption
    attack_kind: str
    params: dict = field(default_factory=dict)
    w_adv: np.ndarray | None = None
    converged: bool = True

    @property
    def support(self) -> np.ndarray:
        return self.b_true.support


def _make_rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def _count_from_fraction(alpha: float, n: int) -> int:
    if not 0.0 <= alpha < 1.0:
        raise InvalidArgumentError("corruption fraction must lie in [0, 1)")
    k = int(round(alpha * n))
    if k >= n:
        raise InvalidArgumentError("corruption fraction leaves no clean samples")
    return k


def oaa(data: Dataset, alpha: float, magnitude_hi: float = 10.0,
        rng_seed=0, mode: str = "add") -> tuple[Dataset, CorruptionRecord]:
    """Oblivious attack: a uniformly random subset of responses is hit with
    uniform-magnitude corruption, without looking at X, the coefficients, or
    the noise.

    `mode="add"` adds U[0, magnitude_hi] to the selected responses;
    `mode="replace"` overwrites them with U[0, magnitude_hi] draws.
    """
    if mode not in ("add", "replace"):
        raise InvalidArgumentError("mode must be 'add' or 'replace'")
    n = data.n
    k = _count_from_fraction(alpha, n)
    rng = _make_rng(rng_seed)
    support = np.sort(rng.choice(n, size=k, replace=False))
    y = data.y.copy()
    draws = rng.uniform(0.0, magnitude_hi, size=k)
    if mode == "add":
        y[support] += draws
    else:
        y[support] = draws
    b = np.zeros(n)
    b[support] = y[support] - data.y[support]
    record = CorruptionRecord(
        b_true=SparseCorruption(b, support),
        attack_kind="OAA",
        params={"alpha": float(alpha), "magnitude_hi": float(magnitude_hi),
                "mode": mode, "seed": rng_seed},
    )
    return Dataset(data.x, y), record


class _SymmetricIndefiniteSolver:
    """Factor a symmetric (possibly indefinite) matrix once, solve many."""

    def __init__(self, a: np.ndarray):
        sytrf, sytrs = get_lapack_funcs(("sytrf", "sytrs"), (a,))
        ldu, ipiv, info = sytrf(a)
        if info != 0:
            raise UnstableDeltaError("symmetric indefinite factorization failed")
        self._ldu, self._ipiv, self._sytrs = ldu, ipiv, sytrs

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        x, info = self._sytrs(self._ldu, self._ipiv, rhs)
        if info != 0:
            raise UnstableDeltaError("symmetric indefinite solve failed")
        return x


def _adca_step(solver: _SymmetricIndefiniteSolver, x, y, delta, w_star, b, k):
    """One recursion step of the adaptive attack: solve the shifted system
    for the displaced coefficient, then hard-threshold its residuals."""
    w = solver.solve(x @ (y - b) - delta * w_star)
    return hard_threshold(y - x.T @ w, k)


def _attacker_objective(x, y, keep, delta, w_star):
    """Inner minimum of the attacker objective for one retained subset.

    Returns (objective, coefficient) for the stationary point of
    sum_{i in S} (y_i - x_i^T w)^2 - delta ||w - w_star||^2, or None when
    the subset Hessian X_S X_S^T - delta I is not positive definite (the
    subset objective is then unbounded below and useless to the attacker).
    """
    xs = x[:, keep]
    h = xs @ xs.T - delta * np.eye(x.shape[0])
    try:
        factor = cho_factor(h, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        return None
    w = cho_solve(factor, xs @ y[keep] - delta * w_star, check_finite=False)
    resid = y[keep] - xs.T @ w
    dev = w - w_star
    return float(resid @ resid - delta * (dev @ dev)), w


def adca(data: Dataset, w_star: np.ndarray, delta: float, k: int,
         tol: float | None = None, max_iter: int = 200
         ) -> tuple[Dataset, CorruptionRecord]:
    """Adaptive attack: hard-thresholding recursion on the attacker's
    objective (subset least squares rewarded for coefficient displacement).

    The recursion solves against X X^T - delta I, an indefinite system, so a
    symmetric indefinite factorization is used. Because the recursion is
    expansive for aggressive delta, every visited subset is scored by the
    attacker objective and the best-scoring one wins (at a fixed point that
    is the final subset). The k selected responses are overwritten with the
    fitted values of that subset's stationary coefficient, so they look
    perfectly consistent with it.
    """
    x, y = data.x, data.y
    n, d = data.n, data.d
    if not 0 <= k < n:
        raise InvalidArgumentError(f"k={k} outside [0, {n})")
    w_star = np.asarray(w_star, dtype=float).ravel()
    if w_star.shape[0] != d:
        raise InvalidArgumentError(f"w_star must have length {d}")
    if delta <= 0:
        raise InvalidArgumentError("delta must be positive")
    if tol is None:
        tol = default_tolerance(y)
    if k == 0:
        record = CorruptionRecord(
            b_true=SparseCorruption(np.zeros(n), np.empty(0, dtype=int)),
            attack_kind="AAA",
            params={"delta": float(delta), "k": 0, "tol": float(tol),
                    "max_iter": int(max_iter)})
        return Dataset(x, y), record

    gram = x @ x.T
    eigs = np.linalg.eigvalsh(gram)
    gaps = np.abs(eigs - delta)
    if gaps.min() == 0.0 or gaps.max() / gaps.min() > 1e12:
        raise UnstableDeltaError(
            f"delta={delta} is too close to an eigenvalue of X X^T; "
            "choose a different penalty coefficient")
    solver = _SymmetricIndefiniteSolver(gram - delta * np.eye(d))
    all_idx = np.arange(n)

    b = np.zeros(n)
    best = None
    seen = set()
    converged = False
    for _ in range(1, max_iter + 1):
        bc = _adca_step(solver, x, y, delta, w_star, b, k)
        delta_b = float(np.linalg.norm(bc.values - b))
        b = bc.values
        corrupt = bc.support_set
        if corrupt not in seen:
            seen.add(corrupt)
            keep = np.setdiff1d(all_idx, bc.support)
            scored = _attacker_objective(x, y, keep, delta, w_star)
            if scored is not None and (best is None or scored[0] < best[0]):
                best = (scored[0], bc.support.copy(), scored[1])
        if delta_b <= tol:
            converged = True
            break
        if best is not None and b @ b > 1e8 * (y @ y) * max(1.0, k):
            break  # iterate far past any useful subset; stop the blow-up
    if best is None:
        raise UnstableDeltaError(
            "no visited subset kept the attacker objective bounded; "
            "use a smaller delta")

    _, support, w_adv = best
    y_attacked = y.copy()
    y_attacked[support] = x[:, support].T @ w_adv
    b_true = np.zeros(n)
    b_true[support] = y_attacked[support] - y[support]
    record = CorruptionRecord(
        b_true=SparseCorruption(b_true, support),
        attack_kind="AAA",
        params={"delta": float(delta), "k": int(k), "tol": float(tol),
                "max_iter": int(max_iter)},
        w_adv=w_adv,
        converged=bool(converged),
    )
    return Dataset(x, y_attacked), record


def lpa(data: Dataset, alpha: float, rng_seed=0,
        exact_leverage: bool = False) -> tuple[Dataset, CorruptionRecord]:
    """Leverage-point attack: zero the responses of the most influential
    covariates.

    Influence is ranked by covariate norm (the isotropic-design proxy for
    leverage); `exact_leverage=True` ranks by the hat-matrix diagonal
    instead. Deterministic regardless of seed; the seed is kept in the
    record for uniformity with the other attacks.
    """
    n = data.n
    k = _count_from_fraction(alpha, n)
    if exact_leverage:
        scores = leverage_scores(data)
    else:
        scores = np.linalg.norm(data.x, axis=0)
    support = np.sort(np.argsort(-scores, kind="stable")[:k])
    y = data.y.copy()
    y[support] = 0.0
    b = np.zeros(n)
    b[support] = -data.y[support]
    record = CorruptionRecord(
        b_true=SparseCorruption(b, support),
        attack_kind="LPA",
        params={"alpha": float(alpha), "seed": rng_seed,
                "exact_leverage": bool(exact_leverage)},
    )
    return Dataset(data.x, y), record


def record_to_json(record: CorruptionRecord) -> str:
    payload = {
        "attack_kind": record.attack_kind,
        "params": record.params,
        "support": [int(i) for i in record.b_true.support],
        "values": [float(record.b_true.values[i]) for i in record.b_true.support],
        "n": int(len(record.b_true)),
        "converged": bool(record.converged),
    }
    if record.w_adv is not None:
        payload["w_adv"] = [float(v) for v in record.w_adv]
    return json.dumps(payload, sort_keys=True)


def record_from_json(text: str) -> CorruptionRecord:
    payload = json.loads(text)
    n = int(payload["n"])
    support = np.asarray(payload["support"], dtype=int)
    values = np.zeros(n)
    values[support] = np.asarray(payload["values"], dtype=float)
    return CorruptionRecord(
        b_true=SparseCorruption(values, support),
        attack_kind=payload["attack_kind"],
        params=payload.get("params", {}),
        w_adv=None if "w_adv" not in payload else np.asarray(payload["w_adv"], float),
        converged=bool(payload.get("converged", True)),
    )
