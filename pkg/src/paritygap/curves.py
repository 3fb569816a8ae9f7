"""Benchmark discount curves: bootstrapped OIS and Treasury constant-maturity."""
from __future__ import annotations

import bisect
import csv
import logging
import math
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
from scipy.optimize import brentq

logger = logging.getLogger(__name__)

CURVES_HEADER = ("date", "kind", "tau", "df", "zero_rate")
ACCRUAL_SCALES = {"unit": 1.0, "ACT/365.25": 1.0, "ACT/360": 365.25 / 360.0}

LOG_LINEAR_DF = "log_linear_df"
LINEAR_ZERO = "linear_zero"


class CurveError(ValueError):
    pass


@dataclass(frozen=True)
class RateCurve:
    """Immutable pillar curve.

    ``OIS`` curves interpolate log-linearly in the discount factor (from an
    implicit ``df(0) = 1`` node); ``DGS`` curves interpolate the continuously
    compounded zero yield linearly in tenor. Both extrapolate flat in the
    zero rate past the last pillar.
    """

    as_of: date | None
    kind: str
    taus: tuple[float, ...]
    dfs: tuple[float, ...]
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.taus) != len(self.dfs) or not self.taus:
            raise CurveError("curve needs matching, non-empty pillar arrays")
        if any(t1 <= t0 for t0, t1 in zip(self.taus, self.taus[1:])) or self.taus[0] <= 0:
            raise CurveError("pillar taus must be positive and strictly increasing")
        if any(not d > 0 for d in self.dfs):
            raise CurveError("pillar discount factors must be positive")

    @property
    def interpolation(self) -> str:
        return LINEAR_ZERO if self.kind == "DGS" else LOG_LINEAR_DF

    @property
    def last_tau(self) -> float:
        return self.taus[-1]

    def extrapolates(self, tau: float) -> bool:
        return tau > self.taus[-1]

    def pillar_zero_rates(self) -> np.ndarray:
        return -np.log(np.asarray(self.dfs)) / np.asarray(self.taus)

    def discount(self, tau: float) -> float:
        tau = float(tau)
        if tau < 0 or math.isnan(tau):
            raise CurveError(f"negative or NaN tau {tau!r}")
        if tau == 0.0:
            return 1.0
        taus = self.taus
        i = bisect.bisect_left(taus, tau)
        if i < len(taus) and taus[i] == tau:
            return self.dfs[i]
        if i == len(taus):
            z_last = -math.log(self.dfs[-1]) / taus[-1]
            return math.exp(-z_last * tau)
        if self.interpolation == LINEAR_ZERO:
            zeros = self.pillar_zero_rates()
            if i == 0:
                z = zeros[0]
            else:
                w = (tau - taus[i - 1]) / (taus[i] - taus[i - 1])
                z = (1 - w) * zeros[i - 1] + w * zeros[i]
            return math.exp(-z * tau)
        t0, d0 = (0.0, 1.0) if i == 0 else (taus[i - 1], self.dfs[i - 1])
        t1, d1 = taus[i], self.dfs[i]
        w = (tau - t0) / (t1 - t0)
        return math.exp((1 - w) * math.log(d0) + w * math.log(d1))

    def zero_rate(self, tau: float) -> float:
        """Continuously compounded zero rate, ``-ln(df) / tau``."""
        if tau <= 0:
            return float(self.pillar_zero_rates()[0])
        return -math.log(self.discount(tau)) / tau


def discount_at(curve: RateCurve, tau: float) -> float:
    return curve.discount(tau)


def _accrual_scale(accrual) -> float:
    if isinstance(accrual, str):
        try:
            return ACCRUAL_SCALES[accrual]
        except KeyError:
            raise CurveError(f"unknown accrual convention {accrual!r}") from None
    return float(accrual)


def _payment_times(tenor: float) -> list[float]:
    """Annual schedule rolled back from maturity; a short stub comes first."""
    times = []
    t = tenor
    while t > 1e-9:
        times.append(t)
        t -= 1.0
    return sorted(times)


def bootstrap_ois(
    par_quotes: Mapping[float, float] | Iterable[tuple[float, float]],
    accrual: float | str = 1.0,
    as_of: date | None = None,
) -> RateCurve:
    """Bootstrap discount factors from OIS par rates given in percent.

    Tenors up to one year are single-period deposits,
    ``df = 1 / (1 + r * alpha)``. Longer tenors are annual-pay par swaps
    solved in sequence; when a swap's earlier payment dates fall beyond the
    last solved pillar, their discount factors are interpolated log-linearly
    towards the unknown one and the par equation is solved numerically.

    ``accrual`` scales each period's length in years (1.0, or ``"ACT/360"``).
    """
    items = list(par_quotes.items() if isinstance(par_quotes, Mapping) else par_quotes)
    if not items:
        raise CurveError("no par quotes")
    tenors = [float(t) for t, _ in items]
    if any(t1 <= t0 for t0, t1 in zip(tenors, tenors[1:])) or tenors[0] <= 0:
        raise CurveError(f"tenors must be positive and strictly increasing: {tenors}")
    if tenors[0] > 1.0:
        raise CurveError("need at least one tenor at or below one year")
    scale = _accrual_scale(accrual)

    taus: list[float] = []
    dfs: list[float] = []
    for tenor, rate_pct in items:
        tenor = float(tenor)
        r = float(rate_pct) / 100.0
        if tenor <= 1.0:
            df = 1.0 / (1.0 + r * tenor * scale)
        else:
            df = _solve_swap(tenor, r, scale, taus, dfs)
        if not (df > 0 and math.isfinite(df)):
            raise CurveError(f"non-positive discount factor at tenor {tenor}")
        taus.append(tenor)
        dfs.append(float(df))

    flags = ()
    rates = [float(r) for _, r in items]
    if all(r >= 0 for r in rates) and any(d1 > d0 for d0, d1 in zip(dfs, dfs[1:])):
        logger.warning("OIS curve %s: discount factors increase with tenor", as_of)
        flags = ("nonmonotone_df",)
    return RateCurve(as_of=as_of, kind="OIS", taus=tuple(taus), dfs=tuple(dfs), flags=flags)


def _solve_swap(tenor: float, r: float, scale: float, taus: list[float], dfs: list[float]) -> float:
    times = _payment_times(tenor)
    alphas = np.diff([0.0] + times) * scale
    known = RateCurve(None, "OIS", tuple(taus), tuple(dfs))
    last = taus[-1]
    inner = times[:-1]
    if all(t <= last for t in inner):
        annuity = sum(a * known.discount(t) for a, t in zip(alphas[:-1], inner))
        return (1.0 - r * annuity) / (1.0 + r * alphas[-1])

    d_last = dfs[-1]

    def df_inner(t: float, x: float) -> float:
        if t <= last:
            return known.discount(t)
        w = (t - last) / (tenor - last)
        return math.exp((1 - w) * math.log(d_last) + w * math.log(x))

    def residual(x: float) -> float:
        annuity = sum(a * df_inner(t, x) for a, t in zip(alphas[:-1], inner))
        return r * annuity + (1.0 + r * alphas[-1]) * x - 1.0

    lo, hi = 1e-12, 1.0
    while residual(hi) < 0:
        hi *= 2.0
        if hi > 1e6:
            raise CurveError(f"cannot bracket discount factor at tenor {tenor}")
    if residual(lo) > 0:
        raise CurveError(f"non-positive discount factor at tenor {tenor}")
    return brentq(residual, lo, hi, xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=200)


def build_dgs_curve(yields: Mapping[float, float], as_of: date | None = None) -> RateCurve:
    """Treat constant-maturity yields (percent) as continuously compounded zeros."""
    items = sorted((float(t), float(y)) for t, y in yields.items())
    if len(items) < 2:
        raise CurveError("DGS curve needs at least two tenors")
    taus = tuple(t for t, _ in items)
    dfs = tuple(math.exp(-(y / 100.0) * t) for t, y in items)
    return RateCurve(as_of=as_of, kind="DGS", taus=taus, dfs=dfs)


def is_anomalous(curve: RateCurve, max_jump_bp: float = 200.0) -> bool:
    """Flag curves whose pillar zero rates jump too far between neighbours."""
    if any(not d > 0 for d in curve.dfs):
        return True
    zeros = curve.pillar_zero_rates()
    return bool(np.any(np.abs(np.diff(zeros)) * 1e4 > max_jump_bp))


def write_curves_csv(path, curves: Iterable[RateCurve]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVES_HEADER)
        for c in sorted(curves, key=lambda c: (c.as_of, c.kind)):
            for tau, df in zip(c.taus, c.dfs):
                w.writerow([c.as_of.isoformat(), c.kind, repr(float(tau)), repr(float(df)),
                            repr(-math.log(df) / tau)])


def read_curves_csv(path) -> dict[tuple[date, str], RateCurve]:
    """Rebuild curves from their pillars. Interpolation follows ``kind``."""
    from .ingest import _check_header

    path = Path(path)
    pillars: dict[tuple[date, str], list[tuple[float, float]]] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        _check_header(path, next(reader, None), CURVES_HEADER)
        for d, kind, tau, df, _ in reader:
            pillars.setdefault((date.fromisoformat(d), kind), []).append((float(tau), float(df)))
    return {
        (d, kind): RateCurve(d, kind, tuple(t for t, _ in p), tuple(x for _, x in p))
        for (d, kind), p in sorted(pillars.items())
    }
