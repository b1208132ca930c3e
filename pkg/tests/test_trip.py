import json
from itertools import combinations

import numpy as np
import pytest

from robustreg.core import Dataset, hard_threshold, ols
from robustreg.errors import InvalidArgumentError
from robustreg.priors import PenaltyMatrix
from robustreg.trip import (
    crr_fit,
    iteration_step_direction,
    profile_objective,
    report_to_json,
    trip_fit,
    trip_objective,
)


def make_instance(seed, n=40, d=3, sigma=0.5):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((d, n))
    w = rng.standard_normal(d)
    w /= np.linalg.norm(w)
    y = x.T @ w + sigma * rng.standard_normal(n)
    return Dataset(x, y), w


def dense_crr_iterates(data, k, tol, max_iter):
    """Textbook recursion with the materialized projection matrix."""
    x, y = data.x, data.y
    p = x.T @ np.linalg.inv(x @ x.T) @ x
    b = np.zeros(data.n)
    out = []
    for _ in range(max_iter):
        b_new = hard_threshold(p @ b + (np.eye(data.n) - p) @ y, k).values
        out.append(b_new)
        if np.linalg.norm(b_new - b) <= tol:
            break
        b = b_new
    return out


class TestCleanData:
    def test_exact_recovery_one_iteration(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((4, 50))
        w = rng.standard_normal(4)
        data = Dataset(x, x.T @ w)
        report = trip_fit(data, PenaltyMatrix.zero(4), np.zeros(4), k=0)
        assert report.iterations == 1
        assert report.converged
        assert np.linalg.norm(report.w_hat - w) < 1e-8
        assert report.b_hat.support.size == 0

    def test_crr_clean_is_ols(self):
        data, _ = make_instance(1)
        report = crr_fit(data, k=0)
        assert np.allclose(report.w_hat, ols(data), atol=1e-12)


class TestCrrReduction:
    def test_zero_penalty_equals_crr(self):
        data, _ = make_instance(2)
        rep_trip = trip_fit(data, PenaltyMatrix.zero(3), np.zeros(3), k=5)
        rep_crr = crr_fit(data, k=5)
        assert np.array_equal(rep_trip.w_hat, rep_crr.w_hat)
        assert np.array_equal(rep_trip.b_hat.values, rep_crr.b_hat.values)
        for a, b in zip(rep_trip.trace, rep_crr.trace):
            assert a.support == b.support and a.delta == b.delta

    def test_matches_dense_projection_oracle(self):
        for seed in range(5):
            data, _ = make_instance(seed, n=30, d=2)
            tol = 1e-4 * np.linalg.norm(data.y)
            report = crr_fit(data, k=4, tol=tol, max_iter=40)
            oracle = dense_crr_iterates(data, 4, tol, 40)
            assert len(report.trace) == len(oracle)
            for rec, b_ref in zip(report.trace, oracle):
                assert set(rec.support) == set(np.flatnonzero(b_ref))
            # final iterate values match the dense-arithmetic path
            final = np.zeros(data.n)
            final[list(report.trace[-1].support)] = report.b_hat.values[
                list(report.trace[-1].support)]
            assert np.allclose(final, oracle[-1], atol=1e-12)


class TestSmallInstanceOracle:
    def test_enumeration_oracle(self):
        rng = np.random.default_rng(5)
        n, d, k_star, k = 8, 1, 2, 3
        sigma = 0.2
        x = rng.uniform(0.5, 2.0, size=(d, n))
        w_star = np.array([1.0])
        y = x.T @ w_star + sigma * rng.standard_normal(n)
        planted = np.array([1, 5])
        y[planted] += np.array([8.0, -9.0])
        data = Dataset(x, y)
        m = np.array([[1.0]])

        # oracle: enumerate all k-sized corrupt sets, minimize the penalized
        # subset objective
        best = None
        for corrupt in combinations(range(n), k):
            keep = np.setdiff1d(np.arange(n), corrupt)
            xs, ys = x[:, keep], y[keep]
            w = np.linalg.solve(xs @ xs.T + m, xs @ ys + m @ w_star)
            obj = trip_objective(data, m, w_star, w, keep)
            if best is None or obj < best[0]:
                best = (obj, set(corrupt))

        report = trip_fit(data, m, w_star, k, tol=1e-12, max_iter=500)
        detected = report.b_hat.support_set
        assert set(planted.tolist()) <= detected
        clean = np.setdiff1d(np.arange(n), planted)
        w_oracle = ols(Dataset(x[:, clean], y[clean]))
        assert np.linalg.norm(report.w_hat - w_oracle) <= 3 * sigma / np.sqrt(n)
        assert set(planted.tolist()) <= best[1]


class TestObjective:
    def test_prior_mean_empty_set_is_zero(self):
        data, _ = make_instance(3)
        w0 = np.array([1.0, 2.0, 3.0])
        assert trip_objective(data, np.eye(3), w0, w0, []) == 0.0

    def test_full_set_zero_penalty_is_rss(self):
        data, _ = make_instance(4)
        w = np.array([0.3, -0.2, 0.9])
        rss = float(np.sum((data.y - data.x.T @ w) ** 2))
        got = trip_objective(data, np.zeros((3, 3)), np.zeros(3), w,
                             range(data.n))
        assert abs(got - rss) < 1e-10

    def test_term_by_term_oracle(self):
        data, _ = make_instance(6, n=12, d=2)
        rng = np.random.default_rng(1)
        m = np.diag(rng.uniform(0.1, 2.0, 2))
        w0 = rng.standard_normal(2)
        w = rng.standard_normal(2)
        s = [0, 3, 7]
        naive = sum((data.y[i] - data.x[:, i] @ w) ** 2 for i in s)
        naive += (w - w0) @ m @ (w - w0)
        assert abs(trip_objective(data, m, w0, w, s) - naive) < 1e-12


class TestGradient:
    def test_step_direction_is_half_gradient(self):
        rng = np.random.default_rng(12)
        data, _ = make_instance(12, n=25, d=3)
        m = np.diag(rng.uniform(0.2, 1.5, 3))
        w0 = rng.standard_normal(3)
        for _ in range(3):
            b = rng.standard_normal(data.n)
            direction = iteration_step_direction(data, m, w0, b)
            h = 1e-6
            for idx in rng.choice(data.n, size=5, replace=False):
                e = np.zeros(data.n)
                e[idx] = h
                fd = (profile_objective(data, m, w0, b + e)
                      - profile_objective(data, m, w0, b - e)) / (2 * h)
                assert abs(fd - 2 * direction[idx]) < 1e-5 * max(1, abs(fd))

    def test_iteration_is_projected_step(self):
        rng = np.random.default_rng(13)
        data, _ = make_instance(13, n=20, d=2)
        m = 0.5 * np.eye(2)
        w0 = rng.standard_normal(2)
        k = 3
        b = rng.standard_normal(data.n)
        direction = iteration_step_direction(data, m, w0, b)
        stepped = hard_threshold(b - direction, k).values
        # the same update written with the projection operators
        x, y = data.x, data.y
        inv = np.linalg.inv(x @ x.T + m)
        p_mx = x.T @ inv @ x
        p_mm = x.T @ inv @ m
        direct = hard_threshold(
            p_mx @ b + (np.eye(data.n) - p_mx) @ y - p_mm @ w0, k).values
        assert np.allclose(stepped, direct, atol=1e-10)


class TestOptionsAndFlags:
    def test_penalized_final_option(self):
        data, _ = make_instance(20)
        m = 2.0 * np.eye(3)
        w0 = np.ones(3)
        rep_pen = trip_fit(data, m, w0, k=4, final="penalized")
        x, y = data.x, data.y
        b = rep_pen.b_hat.values
        expected = np.linalg.solve(x @ x.T + m, x @ (y - b) + m @ w0)
        assert np.allclose(rep_pen.w_hat, expected, atol=1e-10)

    def test_invalid_final(self):
        data, _ = make_instance(21)
        with pytest.raises(InvalidArgumentError):
            trip_fit(data, np.zeros((3, 3)), np.zeros(3), 2, final="mean")

    def test_k_bounds(self):
        data, _ = make_instance(22)
        with pytest.raises(InvalidArgumentError):
            trip_fit(data, np.zeros((3, 3)), np.zeros(3), data.n)

    def test_k_below_truth_flag(self):
        data, w = make_instance(23)
        b_star = np.zeros(data.n)
        b_star[:5] = 3.0
        report = trip_fit(Dataset(data.x, data.y + b_star),
                          PenaltyMatrix.zero(3), np.zeros(3), k=3,
                          b_star=b_star)
        assert report.k_below_truth is True

    def test_refit_identity_zero_penalty_exact_convergence(self):
        # with M = 0 and machine-precision convergence, the returned
        # coefficient equals OLS on the retained samples
        rng = np.random.default_rng(30)
        x = rng.standard_normal((2, 60))
        w = np.array([1.0, -2.0])
        y = x.T @ w + 0.1 * rng.standard_normal(60)
        bad = rng.choice(60, size=6, replace=False)
        y[bad] += rng.uniform(20, 30, size=6)
        data = Dataset(x, y)
        report = crr_fit(data, k=8, tol=1e-13, max_iter=2000)
        assert report.converged
        s = report.support_clean
        w_refit = ols(Dataset(x[:, s], y[s]))
        assert np.linalg.norm(w_refit - report.w_hat) < 1e-10


def test_report_json_schema():
    data = Dataset(np.random.default_rng(0).standard_normal((2, 15)),
                   np.random.default_rng(1).standard_normal(15))
    report = crr_fit(data, k=3)
    payload = json.loads(report_to_json(report))
    assert set(payload) == {"w_hat", "support_corrupt", "iterations",
                            "converged", "trace"}
    assert all("delta" in row for row in payload["trace"])
    assert sorted(payload["support_corrupt"]) == payload["support_corrupt"]
