"""Acceptance criteria, one test each, with a PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v``; the verdict lines are
written straight to the terminal.
"""
import json
import math
import time
from datetime import date, timedelta

import numpy as np
import pytest

from paritygap.carrygap import carry_gap, carry_gap_bp
from paritygap.cli import main
from paritygap.curves import RateCurve, bootstrap_ois
from paritygap.econometrics import SLOPES, ClusteredOLS, fit_ols, run_loyo
from paritygap.implied import extract_panel
from paritygap.ingest import flatten_pairs, pair_quotes
from paritygap.pathrisk import SupportSimConfig, gbm_term, mc_support
from paritygap.synthgen import (PLANTED_POOLED, PLANTED_RMSE_BP, MarketDatasetSpec, PlantedCell,
                                PlantedPanelSpec, gen_market_dataset, gen_quote_cell, gen_regression_panel,
                                strike_grid)


@pytest.fixture
def verdict(capsys):
    def _report(name, checks):
        ok = all(passed for _, passed in checks)
        detail = "; ".join(f"{label} [{'ok' if passed else 'FAIL'}]" for label, passed in checks)
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} {name}: {detail}")
        assert ok, detail
    return _report


def test_identification_exactness(verdict):
    rng = np.random.default_rng(0)
    start = time.perf_counter()
    cells, planted = [], {}
    for i in range(10_000):
        b, f = rng.uniform(0.8, 1.02), rng.uniform(1000, 6000)
        pairs, _ = gen_quote_cell(PlantedCell(b, f, strike_grid(f), tau_days=30 + i % 50),
                                  as_of=date(2000, 1, 1) + timedelta(days=i // 50))
        pairs, _ = pair_quotes(flatten_pairs(pairs))
        cells.append(pairs)
        p0 = pairs[0]
        planted[(p0.market, p0.date, p0.expiry)] = (b, f)
    fits, rejections = extract_panel(cells)
    elapsed = time.perf_counter() - start
    err_b = max(abs(c.b_hat - planted[c.key][0]) for c in fits)
    err_f = max(abs(c.f_hat - planted[c.key][1]) for c in fits)
    verdict("identification exactness", [
        (f"{len(fits)} fits, {len(rejections)} rejections", len(fits) == 10_000),
        (f"max |B err| {err_b:.2e} <= 1e-10", err_b <= 1e-10),
        (f"max |F err| {err_f:.2e} <= 1e-10", err_f <= 1e-10),
        (f"round trip {elapsed:.2f}s < 10s", elapsed < 10),
    ])


def test_identification_under_noise(verdict):
    b_true, f_true = 0.97, 4000.0
    strikes = strike_grid(f_true, 20, 50)
    cells = [gen_quote_cell(PlantedCell(b_true, f_true, strikes, half_spread=0.5, noise_sd=0.5, seed=s))[0]
             for s in range(1000)]
    b_hat = np.empty(1000)
    r2 = np.empty(1000)
    for i, pairs in enumerate(cells):
        (fit,), _ = extract_panel([pairs])
        b_hat[i], r2[i] = fit.b_hat, fit.r2
    bias = abs(b_hat.mean() - b_true)
    verdict("identification under noise", [
        (f"|B bias| {bias:.2e} <= 5e-4", bias <= 5e-4),
        (f"median R2 {np.median(r2):.8f} > 0.99999", np.median(r2) > 0.99999),
    ])


@pytest.mark.slow
def test_path_risk_closed_forms(verdict):
    start = time.perf_counter()
    res = mc_support(SupportSimConfig(sigma=0.2, horizon=1.0, n_paths=200_000, n_steps=2_000, seed=7))
    elapsed = time.perf_counter() - start
    exact_l = 0.2 * math.sqrt(2 / math.pi)
    exact_a = 2 / 3 * exact_l
    rel_l = abs(res.mean_L_at_T - exact_l) / exact_l
    rel_a = abs(res.mean_time_avg_L - exact_a) / exact_a
    verdict("path-risk closed forms", [
        (f"E[L_T] {res.mean_L_at_T:.6f} vs 0.159577 rel {rel_l:.2%} <= 2%", rel_l <= 0.02),
        (f"E[avg L] {res.mean_time_avg_L:.6f} vs 0.106385 rel {rel_a:.2%} <= 2%", rel_a <= 0.02),
        (f"runtime {elapsed:.1f}s < 60s", elapsed < 60),
    ])


def test_gbm_regressor(verdict):
    oracle = 1e4 * 0.04 * (2 / 3) * 0.20 * math.sqrt(2 / math.pi)
    value = gbm_term(4.00, 20.00, 1.0)
    rel = abs(value - oracle) / oracle
    rng = np.random.default_rng(1)
    r, v, t = rng.uniform(0, 8, 10_000), rng.uniform(5, 80, 10_000), rng.uniform(0.05, 3, 10_000)
    a, c = rng.uniform(0.1, 4, 10_000), rng.uniform(0.1, 4, 10_000)
    base = gbm_term(r, v, t)
    sqrt_tau = np.allclose(gbm_term(r, v, 4 * t), 2 * base, rtol=1e-13, atol=0)
    bilinear = (np.allclose(gbm_term(a * r, v, t), a * base, rtol=1e-13, atol=0)
                and np.allclose(gbm_term(r, c * v, t), c * base, rtol=1e-13, atol=0))
    verdict("GBM regressor", [
        (f"gbm_term(4,20,1) = {value:.6f} rel err {rel:.1e} <= 1e-9", rel <= 1e-9 and round(value, 3) == 42.554),
        ("sqrt(tau) scaling on 10,000 inputs", sqrt_tau),
        ("bilinearity on 10,000 inputs", bilinear),
    ])


def test_carry_gap_formula(verdict):
    rng = np.random.default_rng(2)
    d, b, tau = rng.uniform(0.5, 1.1, 10_000), rng.uniform(0.5, 1.1, 10_000), rng.uniform(0.01, 3, 10_000)
    fwd = carry_gap_bp(d, b, tau)
    antisym = np.array_equal(fwd, -carry_gap_bp(b, d, tau))
    scaling = all(np.array_equal(carry_gap_bp(d, b, k * tau), fwd / k) for k in (0.25, 0.5, 2.0, 4.0))
    _, bp = carry_gap(0.99, 0.98, 0.5)
    err = abs(bp - 2e4 * math.log(0.99 / 0.98))
    verdict("carry-gap formula", [
        ("antisymmetry exact on 10,000 triples", antisym),
        ("tau-scaling exact on 10,000 triples", scaling),
        (f"carry_gap(0.99,0.98,0.5) = {bp:.6f} bp, err {err:.1e} <= 1e-6", err <= 1e-6 and round(bp, 2) == 203.05),
    ])


def test_curve_bootstrap(verdict):
    df2 = bootstrap_ois({1.0: 4.0, 2.0: 4.0}).discount(2.0)
    err = abs(df2 - 1.04 ** -2)
    mid = RateCurve(None, "OIS", (1.0, 2.0), (0.96, 0.92)).discount(1.5)
    geo = math.sqrt(0.96 * 0.92)
    ulps = abs(mid - geo) / np.spacing(geo)
    verdict("curve bootstrap", [
        (f"df(2y) = {df2:.12f}, err vs 1.04^-2 {err:.1e} <= 1e-12", err <= 1e-12),
        (f"log-linear midpoint {mid:.12f} vs geometric mean, {ulps:.0f} ulp", ulps <= 2),
    ])


def test_regression_engine(verdict):
    rng = np.random.default_rng(3)
    X = rng.normal(size=(1000, 5))
    y = 2.0 + X @ rng.normal(size=5) + rng.normal(size=1000) * (1 + np.abs(X[:, 0]))
    Z = np.column_stack([np.ones(1000), X])
    oracle = np.linalg.solve(Z.T @ Z, Z.T @ y)
    model = ClusteredOLS().fit(X, y, groups=np.arange(1000))
    coef_err = np.max(np.abs(model.params_ - oracle))
    e = y - Z @ model.params_
    bread = np.linalg.inv(Z.T @ Z)
    hc1 = bread @ (Z.T * e ** 2) @ Z @ bread * 1000 / (1000 - 6)
    cov_err = np.max(np.abs(model.cov_ - hc1))
    ortho = np.max(np.abs(Z.T @ (y - model.predict(X)))) / (np.abs(Z).max() * np.abs(y).max())
    verdict("regression engine", [
        (f"coefficients vs normal equations {coef_err:.1e} <= 1e-8", coef_err <= 1e-8),
        (f"singleton-cluster cov vs HC1 sandwich {cov_err:.1e} <= 1e-10", cov_err <= 1e-10),
        (f"residual orthogonality {ortho:.1e} <= 1e-8", ortho <= 1e-8),
    ])


@pytest.mark.slow
def test_end_to_end_planted_recovery(verdict):
    start = time.perf_counter()
    names = list(PLANTED_POOLED)
    hits = np.zeros((200, len(names)), dtype=bool)
    for seed in range(200):
        panel, _ = gen_regression_panel(PlantedPanelSpec(noise_sd_bp=PLANTED_RMSE_BP, seed=seed))
        fit = fit_ols(panel, "POOLED")
        hits[seed] = [abs(fit.coefficients[k] - PLANTED_POOLED[k]) <= 2 * fit.clustered_se[k] for k in names]
    report = run_loyo(panel, "POOLED")
    elapsed = time.perf_counter() - start
    coverage = hits.mean(axis=0)
    checks = [(f"{k} within 2 SE in {c:.1%} of 200 seeds", c >= 0.90) for k, c in zip(names, coverage)]
    for k in SLOPES:
        pos, neg = report.sign_counts[k]
        checks.append((f"LOYO {k} signs +{pos}/-{neg} over {report.n_folds} years",
                       report.n_folds == 10 and max(pos, neg) == 10))
    checks.append((f"full run {elapsed:.0f}s < 300s", elapsed < 300))
    verdict("end-to-end planted recovery", checks)


def test_determinism(verdict, tmp_path):
    gen_market_dataset(tmp_path / "data", MarketDatasetSpec(years=(2019, 2020, 2021), day_stride=10, seed=3))
    config = str(tmp_path / "data" / "config.ini")
    manifests = {}
    for label, workers in (("run1", 1), ("run2", 1), ("workers8", 8)):
        out = tmp_path / label
        assert main(["run", "--config", config, "--out", str(out), "--workers", str(workers), "--seed", "11"]) == 0
        manifests[label] = (out / "run_manifest.json").read_bytes()
    outputs = len(json.loads(manifests["run1"])["outputs"])
    verdict("determinism", [
        (f"two runs byte-identical ({outputs} hashed outputs)", manifests["run1"] == manifests["run2"]),
        ("workers 1 vs 8 byte-identical", manifests["run1"] == manifests["workers8"]),
    ])
