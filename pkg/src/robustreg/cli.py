"""Command-line interface.

Subcommands: fit (one dataset, one estimator), attack (corrupt a dataset),
sweep (attack x estimator grid from a JSON config), diag (theory-side
instruments), ssa (periodic-series synth / recover / trend). All outputs are
CSV or JSON and byte-identical across reruns with the same inputs and seeds.

Exit codes: 0 success, 2 invalid configuration or arguments, 3 numeric
failure (singular systems, non-convergent quadrature).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .attacks import adca, lpa, oaa, record_to_json
from .brht import brht_fit
from .core import Dataset, load_dataset_csv, ols, save_dataset_csv
from .diagnostics import (
    assumption1_trace,
    breakdown_bound,
    convergence_margin,
    ssc_sss,
)
from .errors import InvalidArgumentError, NumericError, SingularMatrixError
from .harness import (
    ExperimentConfig,
    gen_instance,
    run_sweep,
    weight_prior_from_dict,
    write_csv,
)
from .priors import (
    CoefficientPrior,
    PenaltyMatrix,
    lad_fit,
    penalty_from_prior,
    prior_from_json,
)
from .ssa import (
    SsaConfig,
    extract_trend,
    fit_standard_period,
    load_series_csv,
    recover_series,
    save_series_csv,
    save_truth_csv,
    synth_ssa,
)
from .trip import crr_fit, report_to_json, trip_fit


def _write_text(path, text):
    if path is None:
        sys.stdout.write(text + "\n")
    else:
        Path(path).write_text(text + "\n")


def _load_prior(args, d: int) -> CoefficientPrior:
    if args.prior:
        return prior_from_json(Path(args.prior).read_text())
    raise InvalidArgumentError("this estimator requires --prior FILE")


def _cmd_fit(args) -> int:
    data = load_dataset_csv(args.data)
    est = args.estimator
    if est == "ols":
        w = ols(data)
        _write_text(args.out, json.dumps({"w_hat": [float(v) for v in w]},
                                         sort_keys=True))
        return 0
    if est == "lad":
        fit = lad_fit(data, max_iter=args.max_iter)
        _write_text(args.out, json.dumps(
            {"w_hat": [float(v) for v in fit.w], "iterations": fit.iterations,
             "converged": fit.converged, "objective": fit.objective},
            sort_keys=True))
        return 0
    k = args.k
    if k is None:
        raise InvalidArgumentError("--k is required for thresholding estimators")
    if est == "crr":
        report = crr_fit(data, k, tol=args.tol, max_iter=args.max_iter)
    elif est == "trip":
        prior = _load_prior(args, data.d)
        penalty = penalty_from_prior(prior, args.sigma2)
        report = trip_fit(data, penalty, prior.mean, k,
                          tol=args.tol, max_iter=args.max_iter)
    elif est == "brht":
        prior = _load_prior(args, data.d)
        wspec = json.loads(Path(args.weight_prior).read_text()) \
            if args.weight_prior else {}
        report, _ = brht_fit(data, weight_prior_from_dict(wspec), prior,
                             args.sigma2, k, tol=args.tol)
    else:
        raise InvalidArgumentError(f"unknown estimator {est!r}")
    _write_text(args.out, report_to_json(report))
    return 0


def _cmd_attack(args) -> int:
    data = load_dataset_csv(args.data)
    if args.kind == "oaa":
        attacked, record = oaa(data, args.alpha, args.magnitude_hi,
                               rng_seed=args.seed, mode=args.mode)
    elif args.kind == "lpa":
        attacked, record = lpa(data, args.alpha, rng_seed=args.seed,
                               exact_leverage=args.exact_leverage)
    elif args.kind == "adca":
        if args.w_star is None:
            raise InvalidArgumentError("adca requires --w-star FILE (JSON array)")
        w_star = np.asarray(json.loads(Path(args.w_star).read_text()), float)
        k = args.k if args.k is not None else int(round(args.alpha * data.n))
        attacked, record = adca(data, w_star, args.delta, k,
                                tol=args.tol, max_iter=args.max_iter)
    else:
        raise InvalidArgumentError(f"unknown attack kind {args.kind!r}")
    save_dataset_csv(attacked, args.out_data)
    _write_text(args.out_record, record_to_json(record))
    return 0


def _cmd_sweep(args) -> int:
    config = ExperimentConfig.from_json(Path(args.config).read_text())
    run_sweep(config, out_dir=args.out_dir, workers=args.workers)
    return 0


def _cmd_diag(args) -> int:
    if args.op == "breakdown":
        if args.xi_grid:
            lo, hi, num = args.xi_grid
            xis = np.linspace(lo, hi, int(num))
        else:
            xis = [args.xi]
        rows = [{"xi": float(v), "bound": breakdown_bound(float(v))} for v in xis]
        if args.out:
            write_csv(args.out, ["xi", "bound"], rows)
        else:
            for row in rows:
                sys.stdout.write(f"{row['xi']!r},{row['bound']!r}\n")
        return 0
    if args.op == "ssc":
        data = load_dataset_csv(args.data)
        bounds = ssc_sss(data, args.m, allow_sampling=args.sampling,
                         n_samples=args.samples, rng_seed=args.seed)
        _write_text(args.out, json.dumps(
            {"lambda_m": bounds.lambda_m, "Lambda_m": bounds.big_lambda_m,
             "exact": bounds.exact}, sort_keys=True))
        return 0
    if args.op == "margin":
        data = load_dataset_csv(args.data)
        penalty = args.m_scale * np.eye(data.d)
        margin = convergence_margin(data, penalty, args.k, args.k_star,
                                    allow_sampling=args.sampling,
                                    n_samples=args.samples, rng_seed=args.seed)
        _write_text(args.out, json.dumps({"margin": margin,
                                          "contraction": margin < 1.0},
                                         sort_keys=True))
        return 0
    if args.op == "assumption1":
        cfg = json.loads(Path(args.config).read_text())
        data, w_star, w0, eps = gen_instance(cfg["n"], cfg["d"], cfg.get("sigma", 1.0),
                                             cfg.get("nu", 0.5), cfg.get("seed", 0))
        k_star = int(round(cfg["alpha"] * cfg["n"]))
        delta = cfg.get("delta", cfg.get("delta_factor", 0.2) * cfg["n"])
        attacked, record = adca(data, w_star, delta, k_star)
        m = cfg["m_scale"] * np.eye(cfg["d"])
        trace = assumption1_trace(
            attacked, w_star, eps, record, PenaltyMatrix(m), w0,
            cfg.get("l", 10.0), weight_prior_from_dict(cfg.get("weight_prior", {})),
            cfg.get("sigma2", 1.0), k=int(round(1.2 * k_star)))
        rows = [{"t": i + 1, "u1": float(trace.u1[i]), "u2": float(trace.u2[i]),
                 "ratio": float(trace.ratio[i])} for i in range(len(trace.u1))]
        write_csv(args.out, ["t", "u1", "u2", "ratio"], rows)
        summary = {"gamma_max": trace.gamma_max, "ratio_mean": trace.ratio_mean}
        sys.stdout.write(json.dumps(summary, sort_keys=True) + "\n")
        return 0
    raise InvalidArgumentError(f"unknown diag op {args.op!r}")


def _cmd_ssa(args) -> int:
    if args.synth:
        cfg = SsaConfig(**json.loads(Path(args.config).read_text())) \
            if args.config else SsaConfig(seed=args.seed)
        series, truth = synth_ssa(cfg)
        save_series_csv(series, args.out_series)
        if args.out_truth:
            save_truth_csv(series, truth, args.out_truth)
        return 0
    if args.recover:
        series = load_series_csv(args.series, args.period_length, args.n_periods)
        standard_series = series
        if args.mask:
            # truth sidecar: t,p_true,is_outlier; drop flagged rows before
            # fitting the standard period
            mask_rows = np.loadtxt(args.mask, delimiter=",", skiprows=1)
            sub = np.flatnonzero(mask_rows[:, 2] == 0)
            from .ssa import PeriodicSeries
            standard_series = PeriodicSeries(series.t[sub], series.p[sub],
                                             series.period_length, series.n_periods)
        standard = fit_standard_period(standard_series, args.standard_period,
                                       degree=args.degree)
        result = recover_series(series, standard, s=args.s, alpha=args.alpha,
                                tol=args.tol)
        save_series_csv(result.recovered, args.out_series)
        if args.out_models:
            payload = [None if m is None else
                       {"coefficients": [float(c) for c in m.coefficients]}
                       for m in result.models]
            _write_text(args.out_models, json.dumps(
                {"degree": args.degree, "period_length": args.period_length,
                 "models": payload}, sort_keys=True))
        return 0
    if args.trend:
        series = load_series_csv(args.series, args.period_length, args.n_periods)
        spec = json.loads(Path(args.models).read_text())
        from .ssa import ChebyshevModel
        models = [None if m is None else
                  ChebyshevModel(spec["degree"], np.asarray(m["coefficients"]),
                                 (0.0, spec["period_length"]))
                  for m in spec["models"]]
        trend = extract_trend(series, models, args.tc, args.knn_k)
        rows = [{"t": float(t), "p": float(p)} for t, p in trend]
        write_csv(args.out, ["t", "p"], rows)
        return 0
    raise InvalidArgumentError("choose one of --synth, --recover, --trend")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="robustreg",
        description="Robust regression under adversarial response corruption")
    parser.add_argument("--version", action="version",
                        version=f"robustreg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit one estimator on one dataset CSV")
    p_fit.add_argument("--data", required=True)
    p_fit.add_argument("--estimator", required=True,
                       choices=["ols", "lad", "crr", "trip", "brht"])
    p_fit.add_argument("--prior", help="coefficient prior JSON file")
    p_fit.add_argument("--weight-prior", help="weight prior JSON file")
    p_fit.add_argument("--k", type=int)
    p_fit.add_argument("--sigma2", type=float, default=1.0)
    p_fit.add_argument("--tol", type=float)
    p_fit.add_argument("--max-iter", type=int, default=200)
    p_fit.add_argument("--out")
    p_fit.set_defaults(func=_cmd_fit)

    p_att = sub.add_parser("attack", help="corrupt a dataset CSV")
    p_att.add_argument("--data", required=True)
    p_att.add_argument("--kind", required=True, choices=["oaa", "adca", "lpa"])
    p_att.add_argument("--alpha", type=float, default=0.0)
    p_att.add_argument("--magnitude-hi", type=float, default=10.0)
    p_att.add_argument("--mode", default="add", choices=["add", "replace"])
    p_att.add_argument("--delta", type=float)
    p_att.add_argument("--k", type=int)
    p_att.add_argument("--w-star", help="JSON array file with the true coefficient")
    p_att.add_argument("--seed", type=int, default=0)
    p_att.add_argument("--tol", type=float)
    p_att.add_argument("--max-iter", type=int, default=200)
    p_att.add_argument("--exact-leverage", action="store_true")
    p_att.add_argument("--out-data", required=True)
    p_att.add_argument("--out-record")
    p_att.set_defaults(func=_cmd_attack)

    p_sweep = sub.add_parser("sweep", help="run an attack x estimator grid")
    p_sweep.add_argument("--config", required=True, help="ExperimentConfig JSON")
    p_sweep.add_argument("--out-dir", required=True)
    p_sweep.add_argument("--workers", type=int, default=1)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_diag = sub.add_parser("diag", help="theory-side diagnostics")
    p_diag.add_argument("--op", required=True,
                        choices=["ssc", "margin", "breakdown", "assumption1"])
    p_diag.add_argument("--data")
    p_diag.add_argument("--m", type=int, help="subset size for ssc")
    p_diag.add_argument("--k", type=int, default=0)
    p_diag.add_argument("--k-star", type=int, default=0)
    p_diag.add_argument("--m-scale", type=float, default=0.0,
                        help="penalty M = m_scale * I for margin")
    p_diag.add_argument("--xi", type=float, default=0.0)
    p_diag.add_argument("--xi-grid", type=float, nargs=3,
                        metavar=("LO", "HI", "NUM"))
    p_diag.add_argument("--sampling", action="store_true")
    p_diag.add_argument("--samples", type=int, default=100_000)
    p_diag.add_argument("--seed", type=int, default=0)
    p_diag.add_argument("--config", help="assumption1 scenario JSON")
    p_diag.add_argument("--out")
    p_diag.set_defaults(func=_cmd_diag)

    p_ssa = sub.add_parser("ssa", help="periodic-series pipeline")
    mode = p_ssa.add_mutually_exclusive_group(required=True)
    mode.add_argument("--synth", action="store_true")
    mode.add_argument("--recover", action="store_true")
    mode.add_argument("--trend", action="store_true")
    p_ssa.add_argument("--config", help="generator config JSON (synth)")
    p_ssa.add_argument("--seed", type=int, default=0)
    p_ssa.add_argument("--series", help="input series CSV")
    p_ssa.add_argument("--mask", help="truth CSV used to clean the standard period")
    p_ssa.add_argument("--period-length", type=float, default=1.0)
    p_ssa.add_argument("--n-periods", type=int, default=50)
    p_ssa.add_argument("--standard-period", type=int, default=0)
    p_ssa.add_argument("--degree", type=int, default=9)
    p_ssa.add_argument("--s", type=float, default=1.0)
    p_ssa.add_argument("--alpha", type=float, default=0.3)
    p_ssa.add_argument("--tc", type=float, default=0.5)
    p_ssa.add_argument("--knn-k", type=int, default=5)
    p_ssa.add_argument("--tol", type=float)
    p_ssa.add_argument("--models", help="models JSON from --recover")
    p_ssa.add_argument("--out")
    p_ssa.add_argument("--out-series")
    p_ssa.add_argument("--out-truth")
    p_ssa.add_argument("--out-models")
    p_ssa.set_defaults(func=_cmd_ssa)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InvalidArgumentError, KeyError, FileNotFoundError, json.JSONDecodeError,
            TypeError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except (SingularMatrixError, NumericError, np.linalg.LinAlgError) as exc:
        sys.stderr.write(f"numeric failure: {exc}\n")
        return 3


if __name__ == "__main__":
    sys.exit(main())
