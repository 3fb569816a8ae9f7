"""Joint identification of the implied discount factor and forward.

For one (market, date, expiry) the call-minus-put mid is linear in strike,
``C - P = B * (F - K)``, so a straight-line fit of the synthetic forward on
strike gives ``B = -slope`` and ``F = intercept / B``.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_strike_arrays, parallel_map
from .ingest import QuotePair

logger = logging.getLogger(__name__)

CELLS_HEADER = ("market", "date", "expiry", "tau", "b_hat", "f_hat", "r2", "n_strikes", "ba_med_bp")


class CellRejected(ValueError):
    """A cross-section that cannot identify a positive discount factor."""

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


class ParityForwardRegression(BaseEstimator, RegressorMixin):
    """Least-squares line through the synthetic forward across strikes.

    Parameters
    ----------
    weighted : bool, default False
        Weight each strike by the inverse of its average half-spread. Needs
        ``sample_weight`` in :meth:`fit`.

    Attributes
    ----------
    discount_factor_ : float
        Minus the fitted slope.
    forward_ : float
        Strike at which the fitted synthetic forward crosses zero.
    r2_ : float
        Coefficient of determination of the (weighted) line.
    """

    def __init__(self, weighted: bool = False):
        self.weighted = weighted

    def fit(self, X, y, sample_weight=None):
        strikes, g = check_strike_arrays(X, y)
        if self.weighted and sample_weight is not None:
            w = np.asarray(sample_weight, dtype=float)
        else:
            w = np.ones_like(strikes)
        w = w / w.sum()
        k_bar = w @ strikes
        g_bar = w @ g
        dk = strikes - k_bar
        sxx = w @ (dk * dk)
        if not sxx > 0:
            raise CellRejected("singular_design", "all strikes equal")
        slope = (w @ (dk * (g - g_bar))) / sxx
        if not slope < 0:
            raise CellRejected("nonnegative_slope", f"slope={slope:.6g}")
        b = -slope
        self.discount_factor_ = float(b)
        # F = K_bar + G_bar / B is the intercept/B form with less cancellation
        self.forward_ = float(k_bar + g_bar / b)
        self.intercept_ = float(g_bar - slope * k_bar)
        self.coef_ = np.array([slope])
        resid = g - (g_bar + slope * dk)
        sst = w @ ((g - g_bar) ** 2)
        self.r2_ = float(1.0 - (w @ (resid * resid)) / sst) if sst > 0 else 1.0
        self.r2_ = min(max(self.r2_, 0.0), 1.0)
        return self

    def predict(self, X):
        check_is_fitted(self, "discount_factor_")
        strikes = np.asarray(X, dtype=float).reshape(-1)
        return self.discount_factor_ * (self.forward_ - strikes)


@dataclass(frozen=True)
class CellFit:
    market: str
    date: date
    expiry: date
    tau: float
    b_hat: float
    f_hat: float
    r2: float
    n_strikes: int
    ba_med_bp: float
    flags: tuple[str, ...] = ()

    @property
    def key(self) -> tuple:
        return (self.market, self.date, self.expiry)


@dataclass(frozen=True)
class CellRejection:
    market: str
    date: date
    expiry: date
    reason: str


def fit_cell(
    pairs: Sequence[QuotePair],
    *,
    min_strikes: int = 8,
    atm_band: float = 0.025,
    weighted: bool = False,
) -> CellFit:
    """Identify ``(b_hat, f_hat)`` for one expiry's strike cross-section.

    Raises :class:`CellRejected` when the cross-section is too thin, has
    repeated strikes, or fits a non-negative slope.
    """
    if len(pairs) < min_strikes:
        raise CellRejected("too_few_strikes", f"{len(pairs)} < {min_strikes}")
    first = pairs[0]
    keys = {(p.market, p.date, p.expiry) for p in pairs}
    if len(keys) != 1:
        raise ValueError("fit_cell expects pairs from a single (market, date, expiry)")
    strikes = np.array([p.strike for p in pairs], dtype=float)
    if len(np.unique(strikes)) != len(strikes):
        raise CellRejected("duplicate_strikes")
    call_mid = np.array([p.call_mid for p in pairs], dtype=float)
    put_mid = np.array([p.put_mid for p in pairs], dtype=float)
    half = 0.5 * np.array([p.call_spread + p.put_spread for p in pairs], dtype=float)

    weights = None
    if weighted:
        weights = 1.0 / np.maximum(half, 1e-12)
    model = ParityForwardRegression(weighted=weighted).fit(strikes, call_mid - put_mid, sample_weight=weights)
    b, f = model.discount_factor_, model.forward_

    atm = np.abs(strikes - f) / f <= atm_band
    if not atm.any():
        atm = np.abs(strikes - f) == np.abs(strikes - f).min()
    ba_med_bp = 1e4 * float(np.median(half[atm])) / (f * b)

    flags = []
    if b > 1.2:
        flags.append("b_hat_gt_1.2")
    mid_range = 0.5 * (strikes.min() + strikes.max())
    if abs(f - mid_range) / mid_range > 0.2:
        flags.append("forward_off_strike_range")
    return CellFit(
        market=first.market,
        date=first.date,
        expiry=first.expiry,
        tau=first.tau,
        b_hat=b,
        f_hat=f,
        r2=model.r2_,
        n_strikes=len(pairs),
        ba_med_bp=ba_med_bp,
        flags=tuple(flags),
    )


def _fit_one(args):
    pairs, kwargs = args
    try:
        return fit_cell(pairs, **kwargs)
    except CellRejected as exc:
        p = pairs[0]
        return CellRejection(p.market, p.date, p.expiry, exc.reason)


def extract_panel(
    cells: Iterable[Sequence[QuotePair]] | Mapping[object, Sequence[QuotePair]],
    *,
    min_strikes: int = 8,
    atm_band: float = 0.025,
    weighted: bool = False,
    workers: int = 1,
) -> tuple[list[CellFit], list[CellRejection]]:
    """Fit every cell and split the outcomes into fits and rejections.

    Output order is (market, date, tau) regardless of input order or
    ``workers``.
    """
    if isinstance(cells, Mapping):
        cells = cells.values()
    kwargs = dict(min_strikes=min_strikes, atm_band=atm_band, weighted=weighted)
    jobs = [(list(c), kwargs) for c in cells if len(c)]
    results = parallel_map(_fit_one, jobs, workers=workers)
    fits = sorted((r for r in results if isinstance(r, CellFit)),
                  key=lambda c: (c.market, c.date, c.tau))
    rejections = sorted((r for r in results if isinstance(r, CellRejection)),
                        key=lambda c: (c.market, c.date, c.expiry))
    for r in rejections:
        logger.info("rejected cell %s %s %s: %s", r.market, r.date, r.expiry, r.reason)
    return fits, rejections


def write_cells_csv(path, fits: Iterable[CellFit]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CELLS_HEADER)
        for c in fits:
            w.writerow([c.market, c.date.isoformat(), c.expiry.isoformat(), repr(float(c.tau)),
                        repr(float(c.b_hat)), repr(float(c.f_hat)), repr(float(c.r2)), int(c.n_strikes),
                        repr(float(c.ba_med_bp))])


def read_cells_csv(path) -> list[CellFit]:
    from .ingest import _check_header

    path = Path(path)
    out = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        _check_header(path, next(reader, None), CELLS_HEADER)
        for row in reader:
            m, d, e, tau, b, f, r2, n, ba = row
            out.append(CellFit(m, date.fromisoformat(d), date.fromisoformat(e), float(tau),
                               float(b), float(f), float(r2), int(n), float(ba)))
    return out
