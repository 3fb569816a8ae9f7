"""Carry-gap construction, maturity buckets and descriptive statistics."""
from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np
import pandas as pd

from ._validation import check_columns, check_positive

SUB_ONE_MONTH = "sub1m"
# (label, lower months inclusive, upper months exclusive)
BUCKETS = (
    ("1-2m", 1, 2),
    ("2-3m", 2, 3),
    ("3-5m", 3, 5),
    ("5-7m", 5, 7),
    ("7-10m", 7, 10),
    ("10-14m", 10, 14),
    ("14-21m", 14, 21),
    ("21m+", 21, math.inf),
)
BUCKET_LABELS = tuple(b[0] for b in BUCKETS)


def carry_gap(d_ois: float, b_hat: float, tau: float) -> tuple[float, float]:
    """Annualized log ratio of benchmark to implied discount factor.

    Returns ``(cg, cg_bp)``; positive means the options market embeds more
    carry than the benchmark curve.
    """
    check_positive("d_ois", d_ois)
    check_positive("b_hat", b_hat)
    check_positive("tau", tau)
    # difference of logs keeps cg(d, b) == -cg(b, d) bit for bit
    diff = math.log(d_ois) - math.log(b_hat)
    return diff / tau, 1e4 * diff / tau


def carry_gap_bp(d_ois, b_hat, tau) -> np.ndarray:
    """Vectorized basis-point carry gap."""
    d_ois, b_hat, tau = (np.asarray(a, dtype=float) for a in (d_ois, b_hat, tau))
    if np.any(d_ois <= 0) or np.any(b_hat <= 0) or np.any(tau <= 0):
        raise ValueError("discount factors and tau must be positive")
    return 1e4 * (np.log(d_ois) - np.log(b_hat)) / tau


def assign_bin(tau: float) -> str:
    """Maturity bucket for ``tau`` in years; buckets are left-closed in months."""
    check_positive("tau", tau)
    # rounding keeps k/12 on its own left edge
    months = round(tau * 12.0, 9)
    if months < 1:
        return SUB_ONE_MONTH
    for label, lo, hi in BUCKETS:
        if lo <= months < hi:
            return label
    raise AssertionError("unreachable")


def aggregate_daily(obs: pd.DataFrame, *, pooled: bool = False) -> pd.DataFrame:
    """Per-(market, date) median carry gap with observation counts.

    With ``pooled=True`` both markets are combined per date and ``market``
    is reported as ``"ALL"``.
    """
    check_columns(obs, ["market", "date", "cg_bp"], "carry-gap observations")
    if obs.empty:
        return pd.DataFrame(columns=["market", "date", "cg_bp_median", "n_obs"])
    frame = obs.assign(market="ALL") if pooled else obs
    out = (
        frame.groupby(["market", "date"], sort=True)["cg_bp"]
        .agg(cg_bp_median="median", n_obs="size")
        .reset_index()
    )
    return out


def histogram(values: Sequence[float], bin_width: float = 2.0) -> pd.DataFrame:
    """Counts on a grid of ``bin_width`` aligned to multiples of the width."""
    check_positive("bin_width", bin_width)
    x = np.asarray(values, dtype=float)
    lo = math.floor(x.min() / bin_width) * bin_width
    hi = (math.floor(x.max() / bin_width) + 1) * bin_width
    n_bins = int(round((hi - lo) / bin_width))
    edges = lo + bin_width * np.arange(n_bins + 1)
    counts, _ = np.histogram(x, bins=edges)
    return pd.DataFrame({"left": edges[:-1], "right": edges[1:], "count": counts})


def distribution_stats(values: Iterable[float], bin_width: float = 2.0) -> dict:
    x = np.asarray(list(values), dtype=float)
    if x.size == 0:
        raise ValueError("distribution_stats needs at least one observation")
    return {
        "n": int(x.size),
        "mean": float(x.mean()),
        "median": float(np.median(x)),
        "std": float(x.std(ddof=1)) if x.size > 1 else 0.0,
        "pct_positive": float(100.0 * np.mean(x > 0)),
        "histogram": histogram(x, bin_width),
    }


def maturity_profile(obs: pd.DataFrame) -> pd.DataFrame:
    """Median, dispersion and count of ``cg_bp`` per market and maturity bucket."""
    check_columns(obs, ["bin", "cg_bp"], "carry-gap observations")
    if "market" not in obs.columns:
        obs = obs.assign(market="ALL")
    order = {b: i for i, b in enumerate((SUB_ONE_MONTH,) + BUCKET_LABELS)}
    out = (
        obs.groupby(["market", "bin"])["cg_bp"]
        .agg(median="median", std="std", n_obs="size")
        .reset_index()
    )
    out["_o"] = out["bin"].map(order)
    return out.sort_values(["market", "_o"]).drop(columns="_o").reset_index(drop=True)


def autocorrelation(series: Sequence[float], lags: Sequence[int] = (1, 5, 21, 63)) -> dict[int, float]:
    """Sample autocorrelation of a daily series at the requested lags."""
    x = np.asarray(series, dtype=float)
    x = x - x.mean()
    denom = x @ x
    out = {}
    for lag in lags:
        if lag >= x.size or denom == 0:
            out[int(lag)] = float("nan")
        else:
            out[int(lag)] = float((x[lag:] @ x[:-lag]) / denom)
    return out


def yearly_summary(daily: pd.DataFrame) -> pd.DataFrame:
    """Calendar-year mean and median of the daily median series."""
    frame = daily.assign(year=pd.to_datetime(daily["date"]).dt.year)
    return (
        frame.groupby(["market", "year"])["cg_bp_median"]
        .agg(mean="mean", median="median", n_days="size")
        .reset_index()
    )
