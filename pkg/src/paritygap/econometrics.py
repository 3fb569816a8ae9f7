"""Carry-gap regressions with date-clustered errors and leave-one-year-out validation."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np
import pandas as pd
from scipy import stats
from sklearn.base import BaseEstimator, RegressorMixin, clone
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ._validation import check_columns, parallel_map
from .carrygap import BUCKET_LABELS, SUB_ONE_MONTH, assign_bin, carry_gap_bp
from .curves import RateCurve, is_anomalous
from .ingest import MacroSeries
from .pathrisk import gbm_term

logger = logging.getLogger(__name__)

SPECS = ("POOLED", "SPX_ONLY", "RUT_ONLY")
BENCHMARKS = ("OIS", "DGS")
SLOPES = ("gbm_1y", "gbm_10y", "ba_over_tau", "nfci")
PANEL_COLUMNS = ("market", "date", "expiry", "tau", "bin", "cg_bp", "gbm_1y", "gbm_10y",
                 "ba_over_tau", "nfci", "spx_dummy")


class PanelRow(NamedTuple):
    market: str
    date: object
    expiry: object
    tau: float
    bin: str
    cg_bp: float
    gbm_1y: float
    gbm_10y: float
    ba_over_tau: float
    nfci: float
    spx_dummy: int


def spec_regressors(spec: str) -> tuple[str, ...]:
    spec = spec.upper()
    if spec not in SPECS:
        raise ValueError(f"unknown spec {spec!r}; expected one of {SPECS}")
    return (("spx_dummy",) if spec == "POOLED" else ()) + SLOPES


def spec_rows(rows: pd.DataFrame, spec: str) -> pd.DataFrame:
    spec = spec.upper()
    if spec == "SPX_ONLY":
        return rows[rows["market"] == "SPX"]
    if spec == "RUT_ONLY":
        return rows[rows["market"] == "RUT"]
    return rows


# -- panel -------------------------------------------------------------------


def build_panel(
    cells,
    curves: Mapping[object, RateCurve],
    macro: MacroSeries,
    benchmark: str = "OIS",
    *,
    max_jump_bp: float = 200.0,
) -> tuple[pd.DataFrame, dict]:
    """Join cell fits with benchmark curves and macro regressors.

    ``curves`` maps date to that date's benchmark curve. Rows under one
    month, or on dates missing any input, are dropped and counted in the
    returned audit.
    """
    benchmark = benchmark.upper()
    audit = {"cells": 0, "sub1m": 0, "missing_curve": 0, "anomalous_curve": 0, "missing_rates": 0,
             "missing_vol": 0, "missing_nfci": 0, "extrapolated": 0, "rows": 0}
    rates = macro.rates(benchmark)
    anomalous = {d: is_anomalous(c, max_jump_bp) for d, c in curves.items()}
    out: list[PanelRow] = []
    for c in cells:
        audit["cells"] += 1
        bin_ = assign_bin(c.tau)
        if bin_ == SUB_ONE_MONTH:
            audit["sub1m"] += 1
            continue
        curve = curves.get(c.date)
        if curve is None:
            audit["missing_curve"] += 1
            continue
        if anomalous[c.date]:
            audit["anomalous_curve"] += 1
            continue
        day_rates = rates.get(c.date, {})
        if 1.0 not in day_rates or 10.0 not in day_rates:
            audit["missing_rates"] += 1
            continue
        vol = macro.vol(c.market, c.date)
        if vol is None:
            audit["missing_vol"] += 1
            continue
        nfci = macro.nfci.get(c.date)
        if nfci is None:
            audit["missing_nfci"] += 1
            continue
        if curve.extrapolates(c.tau):
            audit["extrapolated"] += 1
        d_bench = curve.discount(c.tau)
        out.append(PanelRow(
            market=c.market,
            date=c.date,
            expiry=c.expiry,
            tau=c.tau,
            bin=bin_,
            cg_bp=float(carry_gap_bp(d_bench, c.b_hat, c.tau)),
            gbm_1y=gbm_term(day_rates[1.0], vol, c.tau),
            gbm_10y=gbm_term(day_rates[10.0], vol, c.tau),
            ba_over_tau=c.ba_med_bp / c.tau,
            nfci=nfci,
            spx_dummy=int(c.market == "SPX"),
        ))
    audit["rows"] = len(out)
    frame = pd.DataFrame(out, columns=PANEL_COLUMNS)
    if not frame.empty:
        frame = frame.sort_values(["market", "date", "tau"], kind="mergesort").reset_index(drop=True)
    return frame, audit


# -- estimator ---------------------------------------------------------------


def cluster_covariance(X: np.ndarray, resid: np.ndarray, groups, *, small_sample: bool = True) -> np.ndarray:
    """Cluster-robust sandwich ``(X'X)^-1 (sum_g s_g s_g') (X'X)^-1``.

    With ``small_sample`` the result is scaled by ``G/(G-1) * (N-1)/(N-k)``.
    Returns a NaN matrix when there is only one cluster.
    """
    n, k = X.shape
    codes, uniques = pd.factorize(np.asarray(groups), sort=True)
    g = len(uniques)
    if g < 2:
        return np.full((k, k), np.nan)
    scores = X * resid[:, None]
    sums = np.zeros((g, k))
    np.add.at(sums, codes, scores)
    meat = sums.T @ sums
    bread = np.linalg.inv(X.T @ X)
    cov = bread @ meat @ bread
    if small_sample:
        cov *= g / (g - 1) * (n - 1) / (n - k)
    return 0.5 * (cov + cov.T)


def _offending_column(X: np.ndarray, names: Sequence[str]) -> str:
    for j in range(1, X.shape[1] + 1):
        if np.linalg.matrix_rank(X[:, :j]) < j:
            return names[j - 1]
    return names[-1]


class ClusteredOLS(RegressorMixin, BaseEstimator):
    """Least squares with cluster-robust covariance.

    Parameters
    ----------
    fit_intercept : bool, default True
    small_sample : bool, default True
        Apply the ``G/(G-1) * (N-1)/(N-k)`` correction.
    compute_cov : bool, default True
        Skip the sandwich when only point estimates are needed.

    Attributes
    ----------
    coef_, intercept_ : fitted slopes and intercept
    params_ : intercept followed by slopes (when ``fit_intercept``)
    cov_ : covariance of ``params_``; NaN with fewer than two clusters
    bse_ : standard errors, ``sqrt(diag(cov_))``
    n_clusters_ : number of distinct groups
    """

    def __init__(self, fit_intercept: bool = True, small_sample: bool = True, compute_cov: bool = True):
        self.fit_intercept = fit_intercept
        self.small_sample = small_sample
        self.compute_cov = compute_cov

    def _design(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if self.fit_intercept:
            X = np.column_stack([np.ones(len(X)), X])
        return X

    def fit(self, X, y, groups=None):
        names = list(X.columns) if isinstance(X, pd.DataFrame) else None
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        self.n_features_in_ = X.shape[1]
        if names is not None:
            self.feature_names_in_ = np.asarray(names, dtype=object)
        names = names or [f"x{i}" for i in range(X.shape[1])]
        param_names = (["intercept"] if self.fit_intercept else []) + names
        Z = self._design(X)
        n, k = Z.shape
        if n < k:
            raise ValueError(f"{n} rows cannot identify {k} parameters")
        if np.linalg.matrix_rank(Z) < k:
            bad = _offending_column(Z, param_names)
            raise np.linalg.LinAlgError(f"design matrix is rank deficient at column {bad!r}")
        params, *_ = np.linalg.lstsq(Z, y, rcond=None)
        self.params_ = params
        self.param_names_ = param_names
        self.intercept_ = float(params[0]) if self.fit_intercept else 0.0
        self.coef_ = params[1:] if self.fit_intercept else params
        self.n_clusters_ = None
        if self.compute_cov:
            resid = y - Z @ params
            groups = np.arange(n) if groups is None else np.asarray(groups)
            if len(groups) != n:
                raise ValueError("groups must have one entry per row")
            self.cov_ = cluster_covariance(Z, resid, groups, small_sample=self.small_sample)
            self.bse_ = np.sqrt(np.diag(self.cov_))
            self.n_clusters_ = len(np.unique(groups))
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=float)
        return self._design(X) @ self.params_


@dataclass
class RegressionFit:
    spec: str
    benchmark: str
    coefficients: dict[str, float]
    clustered_se: dict[str, float | None]
    t_stats: dict[str, float | None]
    p_values: dict[str, float | None]
    r2: float
    adj_r2: float
    rmse_bp: float
    mae_bp: float
    n_obs: int
    n_days: int
    per_bin_r2: dict[str, float | None]
    rel_err: dict[str, float]
    fitted: np.ndarray = field(repr=False, default=None)
    residuals: np.ndarray = field(repr=False, default=None)

    def to_dict(self) -> dict:
        return {
            "spec": self.spec,
            "benchmark": self.benchmark,
            "coefficients": self.coefficients,
            "clustered_se": self.clustered_se,
            "t_stats": self.t_stats,
            "p_values_normal": self.p_values,
            "r2": self.r2,
            "adj_r2": self.adj_r2,
            "rmse_bp": self.rmse_bp,
            "mae_bp": self.mae_bp,
            "n_obs": self.n_obs,
            "n_days": self.n_days,
            "per_bin_r2": self.per_bin_r2,
            "rel_err": self.rel_err,
        }


def _nan_to_none(x: float) -> float | None:
    return None if x is None or not math.isfinite(x) else float(x)


def fit_ols(rows: pd.DataFrame, spec: str = "POOLED", benchmark: str = "OIS") -> RegressionFit:
    """Estimate one specification with standard errors clustered by date."""
    spec = spec.upper()
    cols = spec_regressors(spec)
    check_columns(rows, ("market", "date", "cg_bp", "bin") + cols, "panel")
    data = spec_rows(rows, spec)
    n, k = len(data), len(cols) + 1
    if n < k + 2:
        raise ValueError(f"{spec}: need at least {k + 2} rows, have {n}")
    model = ClusteredOLS().fit(data.loc[:, cols], data["cg_bp"].to_numpy(float), groups=data["date"].to_numpy())
    y = data["cg_bp"].to_numpy(float)
    fitted = model.predict(data.loc[:, cols].to_numpy(float))
    resid = y - fitted
    sst = float(((y - y.mean()) ** 2).sum())
    sse = float(resid @ resid)
    r2 = 1.0 - sse / sst if sst > 0 else float("nan")
    names = model.param_names_
    se = model.bse_
    tvals = model.params_ / se
    pvals = 2.0 * stats.norm.sf(np.abs(tvals))
    if model.n_clusters_ < 2:
        logger.warning("%s: single date cluster, standard errors unavailable", spec)
    return RegressionFit(
        spec=spec,
        benchmark=benchmark.upper(),
        coefficients={nm: float(v) for nm, v in zip(names, model.params_)},
        clustered_se={nm: _nan_to_none(v) for nm, v in zip(names, se)},
        t_stats={nm: _nan_to_none(v) for nm, v in zip(names, tvals)},
        p_values={nm: _nan_to_none(v) for nm, v in zip(names, pvals)},
        r2=r2,
        adj_r2=1.0 - (1.0 - r2) * (n - 1) / (n - k),
        rmse_bp=math.sqrt(sse / n),
        mae_bp=float(np.abs(resid).mean()),
        n_obs=n,
        n_days=int(data["date"].nunique()),
        per_bin_r2=binned_fit(data, fitted),
        rel_err=rel_error_diag(data, fitted),
        fitted=fitted,
        residuals=resid,
    )


def binned_fit(rows: pd.DataFrame, fitted, min_rows: int = 10) -> dict[str, float | None]:
    """R-squared within each maturity bucket, around the bucket's own mean.

    Buckets with fewer than ``min_rows`` rows or constant actuals are None.
    """
    y = rows["cg_bp"].to_numpy(float)
    f = np.asarray(fitted, dtype=float)
    bins = rows["bin"].to_numpy()
    out: dict[str, float | None] = {}
    for label in BUCKET_LABELS:
        mask = bins == label
        if mask.sum() < min_rows:
            out[label] = None
            continue
        yb = y[mask]
        sst = float(((yb - yb.mean()) ** 2).sum())
        out[label] = None if sst == 0 else 1.0 - float(((yb - f[mask]) ** 2).sum()) / sst
    return out


def rel_error_diag(rows: pd.DataFrame, fitted) -> dict[str, float]:
    """Relative error ``(fitted - actual) / actual``, averaged within then across dates.

    Rows with a zero actual are excluded and counted.
    """
    y = rows["cg_bp"].to_numpy(float)
    f = np.asarray(fitted, dtype=float)
    keep = y != 0
    frame = pd.DataFrame({"date": rows["date"].to_numpy()[keep], "rel": (f[keep] - y[keep]) / y[keep]})
    frame["abs_rel"] = frame["rel"].abs()
    daily = frame.groupby("date")[["rel", "abs_rel"]].mean()
    return {
        "daily_mean_rel_err": float(daily["rel"].mean()) if len(daily) else float("nan"),
        "mean_abs_rel_err": float(daily["abs_rel"].mean()) if len(daily) else float("nan"),
        "n_excluded": int((~keep).sum()),
    }


# -- leave one year out ---------------------------------------------------------


@dataclass
class LoyoReport:
    spec: str
    benchmark: str
    folds: list[dict]
    aggregates: dict[str, dict]
    aggregates_ex2020: dict[str, dict]
    sign_counts: dict[str, tuple[int, int]]
    zero_signs: dict[str, int]
    predictions: pd.DataFrame = field(repr=False, default=None)

    @property
    def n_folds(self) -> int:
        return len(self.folds)

    def fold_frame(self) -> pd.DataFrame:
        """One row per (year, evaluation scope)."""
        recs = []
        for fold in self.folds:
            for scope, m in fold["metrics"].items():
                rec = {"year": fold["year"], "scope": scope, "flagged": m["flagged"]}
                rec.update({k: v for k, v in m.items() if k != "flagged"})
                rec.update({f"coef_{k}": v for k, v in fold["coefficients"].items()})
                recs.append(rec)
        return pd.DataFrame(recs)

    def to_dict(self) -> dict:
        return {
            "spec": self.spec,
            "benchmark": self.benchmark,
            "aggregates": self.aggregates,
            "aggregates_ex2020": self.aggregates_ex2020,
            "sign_counts": {k: list(v) for k, v in self.sign_counts.items()},
            "zero_signs": self.zero_signs,
            "sign_table": sign_table(self),
        }


def _holdout_metrics(y: np.ndarray, pred: np.ndarray, train_mean: float, min_rows: int) -> dict:
    n = len(y)
    if n == 0:
        return {"n_test": 0, "flagged": True}
    resid = y - pred
    sse = float(resid @ resid)
    sst = float(((y - y.mean()) ** 2).sum())
    sst_train = float(((y - train_mean) ** 2).sum())
    corr = float(np.corrcoef(y, pred)[0, 1]) if n > 1 and y.std() > 0 and pred.std() > 0 else float("nan")
    return {
        "n_test": n,
        "oos_r2": 1.0 - sse / sst if sst > 0 else float("nan"),
        "oos_r2_train_mean": 1.0 - sse / sst_train if sst_train > 0 else float("nan"),
        "corr": corr,
        "rmse_bp": math.sqrt(sse / n),
        "flagged": n < min_rows,
    }


def _aggregate(folds: list[dict], preds: pd.DataFrame, scope: str) -> dict:
    ms = [(f["year"], f["metrics"][scope]) for f in folds
          if scope in f["metrics"] and not f["metrics"][scope]["flagged"]]
    if not ms:
        return {"n_folds": 0}
    years = {y for y, _ in ms}
    r2 = np.array([m["oos_r2"] for _, m in ms], dtype=float)
    sub = preds[preds["year"].isin(years)]
    if scope != "ALL":
        sub = sub[sub["market"] == scope]
    y = sub["actual"].to_numpy(float)
    resid = y - sub["predicted"].to_numpy(float)
    sst = float(((y - y.mean()) ** 2).sum())
    return {
        "n_folds": len(ms),
        "mean_r2": float(np.nanmean(r2)),
        "median_r2": float(np.nanmedian(r2)),
        "pooled_r2": 1.0 - float(resid @ resid) / sst if sst > 0 else float("nan"),
        "years_positive": int((r2 > 0).sum()),
        "years_positive_label": f"{int((r2 > 0).sum())}/{len(ms)}",
        "mean_corr": float(np.nanmean([m["corr"] for _, m in ms])),
        "mean_rmse": float(np.mean([m["rmse_bp"] for _, m in ms])),
    }


def _run_fold(args):
    estimator, year, X_train, y_train, g_train, X_test = args
    model = clone(estimator)
    try:
        model.fit(X_train, y_train, groups=g_train)
    except TypeError:
        model.fit(X_train, y_train)
    coefs = np.concatenate([[model.intercept_], np.ravel(model.coef_)])
    return year, coefs, model.predict(X_test), float(np.mean(y_train))


def run_loyo(
    rows: pd.DataFrame,
    spec: str = "POOLED",
    benchmark: str = "OIS",
    *,
    estimator=None,
    min_test_rows: int = 30,
    workers: int = 1,
) -> LoyoReport:
    """Hold out each calendar year, refit on the rest, score the holdout.

    Holdout R-squared is measured against the holdout mean; the train-mean
    variant is reported alongside. With the pooled spec the holdout is also
    scored per market. ``estimator`` is any regressor exposing
    ``intercept_``/``coef_`` after ``fit``; it defaults to a point-estimate
    :class:`ClusteredOLS`.
    """
    spec = spec.upper()
    cols = list(spec_regressors(spec))
    data = spec_rows(rows, spec).reset_index(drop=True)
    years = pd.to_datetime(data["date"]).dt.year.to_numpy()
    uniq = sorted(set(years.tolist()))
    if len(uniq) < 3:
        raise ValueError(f"LOYO needs at least 3 calendar years, found {uniq}")
    estimator = estimator if estimator is not None else ClusteredOLS(compute_cov=False)
    X = data[cols].to_numpy(float)
    y = data["cg_bp"].to_numpy(float)
    dates = data["date"].to_numpy()
    markets = data["market"].to_numpy()

    jobs = []
    for yr in uniq:
        tr, te = years != yr, years == yr
        jobs.append((estimator, yr, X[tr], y[tr], dates[tr], X[te]))
    results = parallel_map(_run_fold, jobs, workers=workers, chunksize=1)

    names = ["intercept"] + cols
    scopes = ["ALL"] + sorted(set(markets.tolist())) if spec == "POOLED" else [sorted(set(markets.tolist()))[0]]
    folds, pred_frames = [], []
    for yr, coefs, pred, train_mean in results:
        te = years == yr
        actual = y[te]
        mk = markets[te]
        metrics = {}
        for scope in scopes:
            mask = np.ones(len(actual), bool) if scope == "ALL" else mk == scope
            metrics[scope] = _holdout_metrics(actual[mask], pred[mask], train_mean, min_test_rows)
        folds.append({"year": int(yr), "coefficients": dict(zip(names, map(float, coefs))), "metrics": metrics})
        pred_frames.append(pd.DataFrame({"year": yr, "market": mk, "date": dates[te],
                                         "actual": actual, "predicted": pred}))
    preds = pd.concat(pred_frames, ignore_index=True)
    for f in folds:
        for scope, m in f["metrics"].items():
            if m["flagged"]:
                logger.warning("LOYO %s fold %d scope %s has %d test rows; excluded from aggregates",
                               spec, f["year"], scope, m["n_test"])

    aggregates = {s: _aggregate(folds, preds, s) for s in scopes}
    ex2020 = {}
    if 2020 in uniq:
        rest = [f for f in folds if f["year"] != 2020]
        ex2020 = {s: _aggregate(rest, preds, s) for s in scopes}

    sign_counts, zero_signs = {}, {}
    for nm in names:
        vals = np.array([f["coefficients"][nm] for f in folds])
        sign_counts[nm] = (int((vals >= 0).sum()), int((vals < 0).sum()))
        zero_signs[nm] = int((vals == 0).sum())
    return LoyoReport(spec, benchmark.upper(), folds, aggregates, ex2020, sign_counts, zero_signs, preds)


def format_sign(positives: int, negatives: int) -> str:
    n = positives + negatives
    if negatives == 0:
        return f"+ {positives}/{n}"
    if positives == 0:
        return f"− {negatives}/{n}"
    return f"mixed (+ {positives}/{n}, − {negatives}/{n})"


def sign_table(report: LoyoReport) -> dict[str, str]:
    """Per-coefficient sign stability, e.g. ``"- 10/10"`` or ``"mixed (+ 1/10, - 9/10)"``.

    Exact zeros count as positive and are noted.
    """
    if not report.sign_counts:
        raise ValueError("empty LOYO report")
    out = {}
    for nm, (pos, neg) in report.sign_counts.items():
        s = format_sign(pos, neg)
        z = report.zero_signs.get(nm, 0)
        if z:
            s += f" [{z} exact zero]"
        out[nm] = s
    return out
