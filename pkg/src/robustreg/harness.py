"""Experiment engine: synthetic instances, attack-by-estimator sweeps,
metrics, and deterministic run manifests.

Randomness is drawn from counter-based generators with explicit stream
splitting (instance, attack, estimator), so adding an estimator or an attack
never perturbs the instances of an existing sweep.
"""

from __future__ import annotations

import json
import subprocess
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .attacks import CorruptionRecord, adca, lpa, oaa
from .brht import brht_fit
from .core import Dataset, SparseCorruption, ols
from .errors import InvalidArgumentError
from .priors import (
    BetaWeightPrior,
    CoefficientPrior,
    GammaWeightPrior,
    LogNormalWeightPrior,
    PenaltyMatrix,
    lad_fit,
    penalty_from_prior,
)
from .trip import crr_fit, trip_fit

__all__ = [
    "ExperimentConfig",
    "gen_instance",
    "run_sweep",
    "SweepResult",
    "convergence_trace",
    "support_precision_recall",
    "weight_prior_from_dict",
]

_INSTANCE_STREAM = 0
_ATTACK_STREAM = 1
_ESTIMATOR_STREAM = 2

RESULT_COLUMNS = ["alpha", "estimator", "rep", "err_w", "precision", "recall",
                  "iterations", "converged"]
SUMMARY_COLUMNS = ["alpha", "estimator", "err_w_mean", "err_w_std",
                   "precision_mean", "recall_mean", "n_ok", "n_failed"]


def stream_rng(seed, stream: int, *extra) -> np.random.Generator:
    """Counter-based generator for one named stream of a seeded run."""
    key = (int(seed), int(stream)) + tuple(int(e) for e in extra)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def gen_instance(n: int, d: int, sigma: float, nu: float, seed):
    """One synthetic regression instance.

    The true coefficient is uniform on the unit sphere, covariates are
    standard normal, and responses carry N(0, sigma^2) noise. The prior
    mean sits at distance exactly nu from the truth, along a uniformly
    random direction, so nu is the error of the prior used alone.
    Returns (dataset, w_star, w0, epsilon).
    """
    if n < 1 or d < 1:
        raise InvalidArgumentError("n and d must be >= 1")
    rng = stream_rng(seed, _INSTANCE_STREAM)
    w_star = rng.standard_normal(d)
    w_star /= np.linalg.norm(w_star)
    x = rng.standard_normal((d, n))
    eps = rng.normal(0.0, sigma, size=n)
    y = x.T @ w_star + eps
    u = rng.standard_normal(d)
    u /= np.linalg.norm(u)
    w0 = w_star + nu * u
    return Dataset(x, y), w_star, w0, eps


def support_precision_recall(detected, true_support) -> tuple[float, float]:
    """Detection quality of a corruption support against the planted one.

    Empty denominators count as perfect (no detections to be wrong about /
    nothing to recall).
    """
    det = set(int(i) for i in detected)
    tru = set(int(i) for i in true_support)
    hit = len(det & tru)
    precision = hit / len(det) if det else 1.0
    recall = hit / len(tru) if tru else 1.0
    return precision, recall


def weight_prior_from_dict(spec: dict):
    family = spec.get("family", "gamma").lower()
    if family == "gamma":
        return GammaWeightPrior(float(spec.get("shape", 4.0)),
                                float(spec.get("rate", 10.0)))
    if family == "lognormal":
        return LogNormalWeightPrior(float(spec.get("mu", 1.0)),
                                    float(spec.get("tau", 1.0)))
    if family == "beta":
        return BetaWeightPrior(float(spec.get("a", 10.0)), float(spec.get("b", 20.0)))
    raise InvalidArgumentError(f"unknown weight prior family {family!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Declarative sweep description, JSON round-trippable."""

    n: int = 2000
    d: int = 100
    sigma: float = 1.0
    nu: float = 0.5
    alpha_grid: tuple = (0.1, 0.2, 0.3, 0.4)
    attack: dict = field(default_factory=lambda: {"kind": "oaa", "magnitude_hi": 10.0})
    estimators: tuple = (
        {"name": "crr"},
        {"name": "trip", "prior_strength": 0.05},
        {"name": "brht", "prior_strength": 0.01,
         "weight_prior": {"family": "gamma", "shape": 4, "rate": 10}},
    )
    replications: int = 10
    seed: int = 0
    k_factor: float = 1.2
    k_cap: float = 0.6
    sigma2: float = 1.0
    tol: float | None = None
    max_iter: int = 200

    def __post_init__(self):
        if not self.alpha_grid:
            raise InvalidArgumentError("alpha_grid must be nonempty")
        if not self.estimators:
            raise InvalidArgumentError("estimators must be nonempty")
        if self.replications < 1:
            raise InvalidArgumentError("replications must be >= 1")
        object.__setattr__(self, "alpha_grid", tuple(float(a) for a in self.alpha_grid))
        object.__setattr__(self, "estimators", tuple(dict(e) for e in self.estimators))

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "ExperimentConfig":
        return ExperimentConfig(**json.loads(text))

    def estimator_k(self, alpha: float) -> int:
        k_star = int(round(alpha * self.n))
        return min(int(round(k_star * self.k_factor)), int(self.k_cap * self.n))


def _apply_attack(config: ExperimentConfig, data: Dataset, w_star, alpha: float,
                  rep: int, alpha_idx: int):
    kind = config.attack.get("kind", "oaa").lower()
    k_star = int(round(alpha * config.n))
    if k_star == 0:
        empty = CorruptionRecord(
            b_true=SparseCorruption(np.zeros(data.n), np.empty(0, dtype=int)),
            attack_kind=kind.upper(), params={"alpha": float(alpha)})
        return data, empty
    seed = (int(config.seed), _ATTACK_STREAM, int(rep), int(alpha_idx))
    if kind == "oaa":
        return oaa(data, alpha, float(config.attack.get("magnitude_hi", 10.0)),
                   rng_seed=seed, mode=config.attack.get("mode", "add"))
    if kind == "adca":
        delta = config.attack.get("delta")
        if delta is None:
            delta = float(config.attack.get("delta_factor", 0.2)) * config.n
        return adca(data, w_star, float(delta), k_star,
                    tol=config.tol, max_iter=config.max_iter)
    if kind == "lpa":
        return lpa(data, alpha, rng_seed=seed,
                   exact_leverage=bool(config.attack.get("exact_leverage", False)))
    raise InvalidArgumentError(f"unknown attack kind {kind!r}")


def _run_estimator(config: ExperimentConfig, est: dict, data: Dataset,
                   w0, alpha: float):
    """Returns (w_hat, detected_support, iterations, converged)."""
    name = est["name"].lower()
    if name == "ols":
        return ols(data), np.empty(0, dtype=int), 1, True
    if name == "lad":
        fit = lad_fit(data)
        return fit.w, np.empty(0, dtype=int), fit.iterations, fit.converged
    k = config.estimator_k(alpha)
    sigma2 = float(est.get("sigma2", config.sigma2))
    if name == "crr":
        rep = crr_fit(data, k, tol=config.tol, max_iter=config.max_iter)
        return rep.w_hat, rep.b_hat.support, rep.iterations, rep.converged
    strength = float(est.get("prior_strength", 0.05))
    prior = CoefficientPrior.isotropic(np.asarray(w0, float), 1.0 / (strength * config.n))
    if name == "trip":
        penalty = penalty_from_prior(prior, sigma2)
        rep = trip_fit(data, penalty, prior.mean, k,
                       tol=config.tol, max_iter=config.max_iter)
        return rep.w_hat, rep.b_hat.support, rep.iterations, rep.converged
    if name == "brht":
        wprior = weight_prior_from_dict(est.get("weight_prior", {}))
        rep, _ = brht_fit(data, wprior, prior, sigma2, k,
                          tol=config.tol, max_iter=min(config.max_iter, 100))
        return rep.w_hat, rep.b_hat.support, rep.iterations, rep.converged
    raise InvalidArgumentError(f"unknown estimator {name!r}")


def _sweep_cell(config: ExperimentConfig, alpha_idx: int, est_idx: int, rep: int):
    alpha = config.alpha_grid[alpha_idx]
    est = config.estimators[est_idx]
    row = {"alpha": alpha, "estimator": est["name"], "rep": rep}
    started = time.perf_counter()
    try:
        data, w_star, w0, _ = gen_instance(config.n, config.d, config.sigma,
                                           config.nu, (config.seed, rep))
        attacked, record = _apply_attack(config, data, w_star, alpha, rep, alpha_idx)
        w_hat, detected, iters, converged = _run_estimator(config, est, attacked,
                                                           w0, alpha)
        precision, recall = support_precision_recall(detected, record.support)
        row.update(err_w=float(np.linalg.norm(w_hat - w_star)),
                   precision=precision, recall=recall,
                   iterations=int(iters), converged=bool(converged))
    except Exception:
        # failure isolation: one bad cell never aborts the grid
        row.update(err_w=float("nan"), precision=float("nan"),
                   recall=float("nan"), iterations=0, converged=False)
    return row, time.perf_counter() - started


@dataclass(frozen=True)
class SweepResult:
    rows: list
    summary: list
    timings: dict


def run_sweep(config: ExperimentConfig, out_dir=None, workers: int = 1) -> SweepResult:
    """Run the full (alpha, estimator, replication) grid.

    Emits results.csv, summary.csv, and manifest.json when out_dir is given.
    Rows are written in grid order so identical configs produce byte-
    identical CSVs; wall-clock timings go only into the manifest.
    """
    cells = [(ai, ei, rep)
             for ai in range(len(config.alpha_grid))
             for ei in range(len(config.estimators))
             for rep in range(config.replications)]
    results: dict = {}
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {cell: pool.submit(_sweep_cell, config, *cell) for cell in cells}
            for cell, fut in futures.items():
                results[cell] = fut.result()
    else:
        for cell in cells:
            results[cell] = _sweep_cell(config, *cell)

    rows = [results[cell][0] for cell in cells]
    timings = {f"{config.alpha_grid[ai]}/{config.estimators[ei]['name']}/{rep}":
               results[(ai, ei, rep)][1] for ai, ei, rep in cells}

    summary = []
    for ai in range(len(config.alpha_grid)):
        for ei in range(len(config.estimators)):
            group = [results[(ai, ei, rep)][0] for rep in range(config.replications)]
            errs = np.asarray([g["err_w"] for g in group])
            ok = np.isfinite(errs)
            summary.append({
                "alpha": config.alpha_grid[ai],
                "estimator": config.estimators[ei]["name"],
                "err_w_mean": float(np.mean(errs[ok])) if ok.any() else float("nan"),
                "err_w_std": float(np.std(errs[ok])) if ok.any() else float("nan"),
                "precision_mean": float(np.mean([g["precision"] for g in group
                                                 if np.isfinite(g["precision"])] or [np.nan])),
                "recall_mean": float(np.mean([g["recall"] for g in group
                                              if np.isfinite(g["recall"])] or [np.nan])),
                "n_ok": int(ok.sum()),
                "n_failed": int((~ok).sum()),
            })

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "results.csv", RESULT_COLUMNS, rows)
        write_csv(out / "summary.csv", SUMMARY_COLUMNS, summary)
        manifest = {
            "config": json.loads(config.to_json()),
            "version": _version_string(),
            "timings_s": timings,
        }
        (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))
    return SweepResult(rows=rows, summary=summary, timings=timings)


def convergence_trace(config: ExperimentConfig, alpha: float, estimator: dict,
                      rep: int = 0):
    """Iteration-level errors of a single fit on one attacked instance.

    Returns rows of (t, err_w, err_b, u) where u is only present for the
    Bayesian-reweighting estimator.
    """
    try:
        alpha_idx = config.alpha_grid.index(alpha)
    except ValueError:
        alpha_idx = 0
    data, w_star, w0, _ = gen_instance(config.n, config.d, config.sigma,
                                       config.nu, (config.seed, rep))
    attacked, record = _apply_attack(config, data, w_star, alpha, rep, alpha_idx)
    name = estimator["name"].lower()
    k = config.estimator_k(alpha)
    sigma2 = float(estimator.get("sigma2", config.sigma2))
    b_true = record.b_true.values
    if name == "crr":
        report = crr_fit(attacked, k, tol=config.tol, max_iter=config.max_iter,
                         w_star=w_star, b_star=b_true)
    elif name == "trip":
        strength = float(estimator.get("prior_strength", 0.05))
        prior = CoefficientPrior.isotropic(w0, 1.0 / (strength * config.n))
        report = trip_fit(attacked, penalty_from_prior(prior, sigma2), prior.mean,
                          k, tol=config.tol, max_iter=config.max_iter,
                          w_star=w_star, b_star=b_true)
    elif name == "brht":
        strength = float(estimator.get("prior_strength", 0.01))
        prior = CoefficientPrior.isotropic(w0, 1.0 / (strength * config.n))
        wprior = weight_prior_from_dict(estimator.get("weight_prior", {}))
        report, _ = brht_fit(attacked, wprior, prior, sigma2, k, tol=config.tol,
                             w_star=w_star, b_star=b_true)
    else:
        raise InvalidArgumentError(f"trace not supported for estimator {name!r}")
    rows = []
    for t, recd in enumerate(report.trace, start=1):
        row = {"t": t, "err_w": recd.err_w, "err_b": recd.err_b}
        if report.u_trace is not None:
            row["u"] = report.u_trace[t - 1]
        rows.append(row)
    return rows, report


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path, columns, rows) -> None:
    """Deterministic CSV: fixed column order, round-trip float formatting."""
    with open(path, "w", newline="") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[c]) for c in columns) + "\n")


def _version_string() -> str:
    try:
        described = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5, cwd=Path(__file__).parent,
        ).stdout.strip()
    except Exception:
        described = ""
    return f"robustreg {__version__}" + (f" ({described})" if described else "")
