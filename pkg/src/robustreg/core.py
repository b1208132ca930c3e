"""Shared conventions and primitives for the regression algorithms.

Data layout follows the column-per-sample convention: the design matrix `x`
is d-by-n with column i holding the covariates of sample i, and `y` has one
response per column of `x`. Row-per-sample files are transposed on ingestion.

All functions here are pure; inputs are never mutated.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import InvalidArgumentError, SingularMatrixError

__all__ = [
    "Dataset",
    "SparseCorruption",
    "hard_threshold",
    "residuals",
    "leverage_scores",
    "penalized_least_squares",
    "ols",
    "load_dataset_csv",
    "save_dataset_csv",
]


@dataclass(frozen=True)
class Dataset:
    """Design matrix (d x n, column per sample) and response vector (n,)."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        y = np.asarray(self.y, dtype=float).ravel()
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise InvalidArgumentError("x must be a d x n matrix with d, n >= 1")
        if x.shape[1] != y.shape[0]:
            raise InvalidArgumentError(
                f"x has {x.shape[1]} columns but y has {y.shape[0]} entries"
            )
        if not np.all(np.isfinite(x)):
            raise InvalidArgumentError("x contains non-finite entries")
        if not np.all(np.isfinite(y)):
            raise InvalidArgumentError("y contains non-finite entries")
        x = x.copy()
        y = y.copy()
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def d(self) -> int:
        return self.x.shape[0]

    def with_y(self, y: np.ndarray) -> "Dataset":
        """Same covariates with a replaced response vector."""
        return Dataset(self.x, y)


@dataclass(frozen=True)
class SparseCorruption:
    """A sparse vector together with its support (0-based indices)."""

    values: np.ndarray
    support: np.ndarray = field(default=None)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).ravel()
        if self.support is None:
            support = np.flatnonzero(values)
        else:
            support = np.asarray(self.support, dtype=int).ravel()
        support = np.sort(support)
        if support.size and (support[0] < 0 or support[-1] >= values.size):
            raise InvalidArgumentError("support indices out of range")
        off = np.setdiff1d(np.arange(values.size), support, assume_unique=False)
        if np.any(values[off] != 0.0):
            raise InvalidArgumentError("values must vanish off the support")
        values = values.copy()
        values.flags.writeable = False
        support = support.copy()
        support.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "support", support)

    @property
    def support_set(self) -> frozenset:
        return frozenset(int(i) for i in self.support)

    def __len__(self) -> int:
        return self.values.size


def hard_threshold(v: np.ndarray, k: int) -> SparseCorruption:
    """Keep the k largest-magnitude entries of v, zero the rest.

    Ties in magnitude are broken toward the smaller index, so the result is
    deterministic. Entries that are exactly zero are never part of the
    support, hence at most min(k, #nonzero) entries survive.
    """
    v = np.asarray(v, dtype=float).ravel()
    n = v.size
    if not 0 <= k <= n:
        raise InvalidArgumentError(f"k={k} outside [0, {n}]")
    out = np.zeros(n)
    if k == 0:
        return SparseCorruption(out, np.empty(0, dtype=int))
    # stable sort of -|v|: equal magnitudes keep ascending index order
    order = np.argsort(-np.abs(v), kind="stable")
    keep = order[:k]
    keep = keep[v[keep] != 0.0]
    out[keep] = v[keep]
    return SparseCorruption(out, keep)


def residuals(data: Dataset, w: np.ndarray) -> np.ndarray:
    """Per-sample residuals y_i - x_i^T w."""
    w = np.asarray(w, dtype=float).ravel()
    if w.shape[0] != data.d:
        raise InvalidArgumentError(
            f"w has length {w.shape[0]} but the design has {data.d} rows"
        )
    return data.y - data.x.T @ w


def _spd_factor(a: np.ndarray, what: str):
    """Cholesky factor of a symmetric matrix, mapped to our error type."""
    try:
        return cho_factor(a, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        cond = float(np.linalg.cond(a)) if np.all(np.isfinite(a)) else np.inf
        raise SingularMatrixError(f"{what} is singular or not positive definite",
                                  cond=cond) from exc


def leverage_scores(data: Dataset) -> np.ndarray:
    """Leverage h_i = x_i^T (X X^T)^{-1} x_i for every sample.

    Each score lies in [0, 1] and they sum to d when X X^T is nonsingular.
    """
    x = data.x
    factor = _spd_factor(x @ x.T, "X X^T")
    z = cho_solve(factor, x, check_finite=False)
    return np.einsum("ij,ij->j", x, z)


def penalized_least_squares(data: Dataset, m: np.ndarray, w0: np.ndarray) -> np.ndarray:
    """Solve (X X^T + M) w = X y + M w0 through a Cholesky factorization.

    M is a positive semidefinite penalty matrix; M = 0 gives the ordinary
    least-squares solution. No explicit inverse is ever formed.
    """
    x, y = data.x, data.y
    d = data.d
    m = np.asarray(m, dtype=float)
    if np.isscalar(w0) or np.ndim(w0) == 0:
        w0 = np.full(d, float(w0))
    w0 = np.asarray(w0, dtype=float).ravel()
    if m.shape != (d, d):
        raise InvalidArgumentError(f"penalty matrix must be {d} x {d}")
    if w0.shape[0] != d:
        raise InvalidArgumentError(f"w0 must have length {d}")
    factor = _spd_factor(x @ x.T + m, "X X^T + M")
    return cho_solve(factor, x @ y + m @ w0, check_finite=False)


def ols(data: Dataset) -> np.ndarray:
    """Ordinary least squares, i.e. the zero-penalty solve."""
    factor = _spd_factor(data.x @ data.x.T, "X X^T")
    return cho_solve(factor, data.x @ data.y, check_finite=False)


def load_dataset_csv(path) -> Dataset:
    """Read a dataset from CSV: header row, column `y` first, then x1..xd.

    One row per sample; the loader transposes into the d x n layout.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "y":
            raise InvalidArgumentError("dataset CSV must start with a 'y' column")
        rows = [[float(cell) for cell in row] for row in reader if row]
    if not rows:
        raise InvalidArgumentError("dataset CSV has no data rows")
    arr = np.asarray(rows, dtype=float)
    if arr.shape[1] != len(header):
        raise InvalidArgumentError("ragged dataset CSV")
    return Dataset(arr[:, 1:].T, arr[:, 0])


def save_dataset_csv(data: Dataset, path) -> None:
    """Write a dataset as CSV with header y,x1..xd, one row per sample."""
    header = ["y"] + [f"x{j + 1}" for j in range(data.d)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(data.n):
            writer.writerow([repr(float(data.y[i]))]
                            + [repr(float(v)) for v in data.x[:, i]])
