"""Synthetic inputs with planted ground truth.

Three generators, from smallest to largest:

* :func:`gen_quote_cell` - one expiry's strike cross-section for a known
  discount factor and forward.
* :func:`gen_regression_panel` - a regression panel whose carry gap is a
  known linear function of the regressors plus Gaussian noise.
* :func:`gen_market_dataset` - raw quote and macro files, in the same
  schemas the pipeline ingests, whose implied discount factors reproduce a
  planted panel once run through the full pipeline.
"""
from __future__ import annotations

import configparser
import json
import math
from dataclasses import asdict, dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from scipy import stats

from .curves import bootstrap_ois
from .econometrics import PANEL_COLUMNS
from .carrygap import assign_bin
from .ingest import (QuotePair, flatten_pairs, forward_fill, write_quotes_csv, write_series_csv,
                     write_tenor_csv, year_fraction)
from .pathrisk import gbm_term

# Pooled in-sample estimates (date-clustered) used as the default plant.
PLANTED_POOLED = {
    "intercept": 24.901,
    "spx_dummy": -0.985,
    "gbm_1y": -0.557,
    "gbm_10y": 0.469,
    "ba_over_tau": 0.158,
    "nfci": -24.598,
}
PLANTED_RMSE_BP = 13.57
PLANTED_MEAN_CG_BP = 36.91

OIS_TENORS = (1 / 12, 0.25, 0.5, 1.0, 2.0, 3.0, 5.0, 7.0, 10.0)


# -- single cell -------------------------------------------------------------


@dataclass(frozen=True)
class PlantedCell:
    b_true: float
    f_true: float
    strikes: tuple[float, ...]
    half_spread: float = 0.5
    noise_sd: float = 0.0
    seed: int = 0
    cushion: float = 1.0
    tau_days: int = 182

    def __post_init__(self):
        if not 0 < self.b_true <= 1.1:
            raise ValueError("b_true must lie in (0, 1.1]")
        if len(set(self.strikes)) != len(self.strikes) or min(self.strikes) <= 0:
            raise ValueError("strikes must be distinct and positive")


def strike_grid(forward: float, n: int = 20, spacing: float = 50.0) -> tuple[float, ...]:
    """``n`` equally spaced strikes centred on ``forward``."""
    return tuple(float(forward + spacing * (i - (n - 1) / 2)) for i in range(n))


def gen_quote_cell(
    p: PlantedCell,
    market: str = "SPX",
    as_of: date = date(2020, 1, 2),
) -> tuple[list[QuotePair], float]:
    """Quote pairs whose call-minus-put mid is ``b (f - K)`` plus noise.

    The put mid is the discounted intrinsic value plus a cushion; only the
    difference of the two mids carries information, so the split is free.
    Returns the pairs and the cushion actually used, which is raised above
    ``p.cushion`` when needed to keep every bid non-negative.
    """
    k = np.asarray(p.strikes, dtype=float)
    rng = np.random.default_rng(p.seed)
    g = p.b_true * (p.f_true - k)
    if p.noise_sd > 0:
        g = g + rng.normal(0.0, p.noise_sd, size=k.size)
    base_put = p.b_true * np.maximum(k - p.f_true, 0.0)
    floor = p.half_spread + 0.01
    cushion = p.cushion
    lowest = min((base_put + cushion).min(), (base_put + cushion + g).min())
    if lowest < floor:
        cushion += floor - lowest
    put_mid = base_put + cushion
    call_mid = put_mid + g
    expiry = as_of + timedelta(days=p.tau_days)
    tau = year_fraction(as_of, expiry)
    spread = 2.0 * p.half_spread
    pairs = [
        QuotePair(market, as_of, expiry, float(kk), float(c), float(pu), spread, spread, tau)
        for kk, c, pu in zip(k, call_mid, put_mid)
    ]
    return pairs, cushion


# -- regressors ---------------------------------------------------------------


def ar1(rng: np.random.Generator, n: int, persistence: float) -> np.ndarray:
    """Stationary unit-variance AR(1) path."""
    e = rng.standard_normal(n)
    out = np.empty(n)
    out[0] = e[0]
    scale = math.sqrt(1.0 - persistence ** 2)
    for i in range(1, n):
        out[i] = persistence * out[i - 1] + scale * e[i]
    return out


@dataclass(frozen=True)
class RegressorRanges:
    """Mean, standard deviation and clip bounds of each driving series."""

    rate_1y: tuple[float, float, float, float] = (2.0, 1.5, 0.0, 6.0)
    term_spread: tuple[float, float, float, float] = (0.8, 0.7, -1.0, 3.0)
    vix: tuple[float, float, float, float] = (19.0, 7.0, 9.0, 80.0)
    rvx_over_vix: tuple[float, float, float, float] = (1.25, 0.08, 1.0, 1.6)
    nfci: tuple[float, float, float, float] = (-0.4, 0.2, -0.8, 1.0)
    ba_bp_spx: tuple[float, float] = (2.5, 0.35)  # lognormal median, log-sd
    ba_bp_rut: tuple[float, float] = (5.0, 0.35)


def _macro_paths(rng, n_days: int, ranges: RegressorRanges, persistence: float) -> dict[str, np.ndarray]:
    out = {}
    for name in ("rate_1y", "term_spread", "vix", "rvx_over_vix", "nfci"):
        mean, sd, lo, hi = getattr(ranges, name)
        out[name] = np.clip(mean + sd * ar1(rng, n_days, persistence), lo, hi)
    out["rate_10y"] = np.clip(out["rate_1y"] + out.pop("term_spread"), 0.25, 7.0)
    out["rvx"] = out["vix"] * out.pop("rvx_over_vix")
    return out


def business_days(years: Sequence[int], stride: int = 1) -> list[date]:
    days = []
    for y in years:
        rng = pd.bdate_range(f"{y}-01-01", f"{y}-12-31")
        days.extend(d.date() for d in rng[::stride])
    return days


# -- regression panel ---------------------------------------------------------------


@dataclass(frozen=True)
class PlantedPanelSpec:
    coefficients: dict = field(default_factory=lambda: dict(PLANTED_POOLED))
    noise_sd_bp: float = PLANTED_RMSE_BP
    years: tuple[int, ...] = tuple(range(2016, 2026))
    rows_per_day: int = 8
    spx_share: float = 0.6
    tau_range: tuple[float, float] = (1 / 12, 2.5)
    persistence: float = 0.97
    ranges: RegressorRanges = field(default_factory=RegressorRanges)
    day_stride: int = 1
    seed: int = 0

    def __post_init__(self):
        if len(set(self.years)) < 3:
            raise ValueError("need at least 3 years")
        if self.noise_sd_bp < 0:
            raise ValueError("noise_sd_bp must be non-negative")


def gen_regression_panel(s: PlantedPanelSpec) -> tuple[pd.DataFrame, dict]:
    """Panel rows whose ``cg_bp`` is the planted linear signal plus noise.

    Returns the panel and a truth record holding the plant, the noiseless
    signal per row and the implied share of positive carry gaps.
    """
    rng = np.random.default_rng(s.seed)
    days = business_days(s.years, s.day_stride)
    n_days = len(days)
    macro = _macro_paths(rng, n_days, s.ranges, s.persistence)

    n_spx = int(round(s.spx_share * s.rows_per_day))
    per_day_market = np.array(["SPX"] * n_spx + ["RUT"] * (s.rows_per_day - n_spx))
    market = np.tile(per_day_market, n_days)
    day_idx = np.repeat(np.arange(n_days), s.rows_per_day)
    n = market.size
    lo, hi = s.tau_range
    tau = rng.uniform(lo, hi, size=n)
    is_spx = market == "SPX"
    vol = np.where(is_spx, macro["vix"][day_idx], macro["rvx"][day_idx])
    med = np.where(is_spx, s.ranges.ba_bp_spx[0], s.ranges.ba_bp_rut[0])
    lsd = np.where(is_spx, s.ranges.ba_bp_spx[1], s.ranges.ba_bp_rut[1])
    ba_bp = med * np.exp(lsd * rng.standard_normal(n))
    date_col = np.array(days, dtype=object)[day_idx]
    frame = pd.DataFrame({
        "market": market,
        "date": date_col,
        "expiry": [d + timedelta(days=int(round(t * 365.25))) for d, t in zip(date_col, tau)],
        "tau": tau,
        "bin": [assign_bin(t) for t in tau],
        "gbm_1y": gbm_term(macro["rate_1y"][day_idx], vol, tau),
        "gbm_10y": gbm_term(macro["rate_10y"][day_idx], vol, tau),
        "ba_over_tau": ba_bp / tau,
        "nfci": macro["nfci"][day_idx],
        "spx_dummy": is_spx.astype(int),
    })
    beta = s.coefficients
    signal = beta["intercept"] + sum(beta[c] * frame[c].to_numpy(float) for c in beta if c != "intercept")
    frame["cg_bp"] = signal + s.noise_sd_bp * rng.standard_normal(n)
    frame = frame.loc[:, PANEL_COLUMNS]
    truth = {
        "coefficients": dict(beta),
        "noise_sd_bp": s.noise_sd_bp,
        "signal": signal,
        "implied_pct_positive": float(100.0 * np.mean(stats.norm.cdf(signal / s.noise_sd_bp)))
        if s.noise_sd_bp > 0 else float(100.0 * np.mean(signal > 0)),
        "seed": s.seed,
    }
    return frame, truth


def gen_daily_carry_gaps(mean_bp: float = PLANTED_MEAN_CG_BP, sd_bp: float = 15.0, n_days: int = 2456,
                         persistence: float = 0.97, seed: int = 0) -> np.ndarray:
    """Persistent daily carry-gap series with a planted stationary mean."""
    rng = np.random.default_rng(seed)
    return mean_bp + sd_bp * ar1(rng, n_days, persistence)


# -- raw market dataset ---------------------------------------------------------


@dataclass(frozen=True)
class MarketDatasetSpec:
    coefficients: dict = field(default_factory=lambda: dict(PLANTED_POOLED))
    noise_sd_bp: float = PLANTED_RMSE_BP
    years: tuple[int, ...] = (2019, 2020, 2021)
    day_stride: int = 5
    expiry_days: tuple[int, ...] = (20, 35, 50, 75, 110, 160, 230, 330, 450, 600, 800)
    n_strikes: int = 20
    strike_step: float = 0.01  # fraction of the forward
    spots: tuple[tuple[str, float], ...] = (("SPX", 4000.0), ("RUT", 2000.0))
    persistence: float = 0.97
    ranges: RegressorRanges = field(default_factory=RegressorRanges)
    dgs_spread_pct: float = 0.15
    snapshot_time: str = "15:45"
    seed: int = 0


def _par_curve(r1: float, r10: float) -> dict[float, float]:
    out = {}
    for t in OIS_TENORS:
        if t <= 1.0:
            out[t] = max(r1 - 0.1 * (1.0 - t), 0.0)
        else:
            out[t] = r1 + (r10 - r1) * math.log(t) / math.log(10.0)
    return out


def gen_market_dataset(out_dir, spec: MarketDatasetSpec | None = None) -> dict:
    """Write quote, rate, volatility and NFCI files plus a ready config.

    The carry gap of each (market, date, expiry) is planted from
    ``spec.coefficients``; the implied discount factor is set so the OIS
    benchmark reproduces it, and the quoted spread is set so the ATM
    bid-ask measure equals the planted friction regressor. Each market also
    gets a sub-one-month expiry, a thin expiry below the strike threshold,
    and off-snapshot rows, all of which the pipeline must drop.
    """
    spec = spec or MarketDatasetSpec()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    days = business_days(spec.years, spec.day_stride)
    macro = _macro_paths(rng, len(days), spec.ranges, spec.persistence)

    ois, dgs, vix, rvx = {}, {}, {}, {}
    for i, d in enumerate(days):
        par = _par_curve(macro["rate_1y"][i], macro["rate_10y"][i])
        ois[d] = par
        dgs[d] = {t: r + spec.dgs_spread_pct for t, r in par.items()}
        vix[d] = float(macro["vix"][i])
        rvx[d] = float(macro["rvx"][i])
    # weekly NFCI, dated Fridays, starting the week before the first day
    first_friday = days[0] - timedelta(days=(days[0].weekday() - 4) % 7 or 7)
    fridays = []
    f = first_friday
    while f <= days[-1]:
        fridays.append(f)
        f += timedelta(days=7)
    nfci_path = np.clip(spec.ranges.nfci[0] + spec.ranges.nfci[1] * ar1(rng, len(fridays), 0.9),
                        spec.ranges.nfci[2], spec.ranges.nfci[3])
    nfci_rel = {fr: float(v) for fr, v in zip(fridays, nfci_path)}
    nfci_daily = forward_fill(nfci_rel, days)

    beta = spec.coefficients
    quotes = {m: [] for m, _ in spec.spots}
    truth_rows = []
    spot = {m: s0 for m, s0 in spec.spots}
    for i, d in enumerate(days):
        curve = bootstrap_ois(ois[d], as_of=d)
        for market, _ in spec.spots:
            spot[market] *= math.exp(0.01 * rng.standard_normal())
            vol = vix[d] if market == "SPX" else rvx[d]
            ba_med, ba_sd = spec.ranges.ba_bp_spx if market == "SPX" else spec.ranges.ba_bp_rut
            for j, ed in enumerate(spec.expiry_days):
                expiry = d + timedelta(days=ed)
                tau = year_fraction(d, expiry)
                fwd = round(spot[market] * math.exp(0.01 * tau), 2)
                ba_bp = ba_med * math.exp(ba_sd * rng.standard_normal())
                regs = {
                    "spx_dummy": float(market == "SPX"),
                    "gbm_1y": gbm_term(ois[d][1.0], vol, tau),
                    "gbm_10y": gbm_term(ois[d][10.0], vol, tau),
                    "ba_over_tau": ba_bp / tau,
                    "nfci": nfci_daily[d],
                }
                cg_bp = beta["intercept"] + sum(beta[k] * v for k, v in regs.items())
                cg_bp += spec.noise_sd_bp * rng.standard_normal()
                b = curve.discount(tau) * math.exp(-cg_bp / 1e4 * tau)
                half = ba_bp * fwd * b / 2e4
                n_k = spec.n_strikes if j != 1 else 5  # second expiry is deliberately thin
                step = round(spec.strike_step * fwd / 5.0) * 5.0 or 5.0
                center = round(fwd / 5.0) * 5.0
                strikes = tuple(center + step * (k - (n_k - 1) // 2) for k in range(n_k))
                cell = PlantedCell(b_true=b, f_true=fwd, strikes=strikes, half_spread=half,
                                   cushion=max(1.0, 10.0 * half), tau_days=ed)
                pairs, _ = gen_quote_cell(cell, market=market, as_of=d)
                quotes[market].extend(flatten_pairs(pairs, spec.snapshot_time))
                if j == 0:
                    quotes[market].extend(flatten_pairs(pairs[:3], "15:46"))
                truth_rows.append({"market": market, "date": d.isoformat(), "expiry": expiry.isoformat(),
                                   "tau": tau, "b_true": b, "f_true": fwd, "cg_bp": cg_bp,
                                   "n_strikes": n_k, **regs})

    files = {}
    for market in quotes:
        files[f"quotes_{market.lower()}"] = f"quotes_{market}.csv"
        write_quotes_csv(out / f"quotes_{market}.csv", quotes[market])
    write_tenor_csv(out / "ois.csv", ois)
    write_tenor_csv(out / "dgs.csv", dgs)
    write_series_csv(out / "vix.csv", vix)
    write_series_csv(out / "rvx.csv", rvx)
    write_series_csv(out / "nfci.csv", nfci_rel)
    files.update(ois="ois.csv", dgs="dgs.csv", vix="vix.csv", rvx="rvx.csv", nfci="nfci.csv")
    pd.DataFrame(truth_rows).to_csv(out / "truth_cells.csv", index=False)

    truth = {"coefficients": dict(beta), "noise_sd_bp": spec.noise_sd_bp, "seed": spec.seed,
             "spec": {k: v for k, v in asdict(spec).items() if k not in ("coefficients", "ranges")}}
    (out / "truth.json").write_text(json.dumps(truth, indent=2, sort_keys=True, default=str) + "\n")

    cfg = configparser.ConfigParser()
    cfg["inputs"] = files
    cfg["ingest"] = {"snapshot_time": spec.snapshot_time}
    cfg["run"] = {"benchmark": "OIS", "specs": "all", "loyo": "true", "out": "out"}
    with (out / "config.ini").open("w") as fh:
        cfg.write(fh)
    return truth


def write_panel_csv(path, frame: pd.DataFrame) -> None:
    frame.loc[:, list(PANEL_COLUMNS)].to_csv(path, index=False, lineterminator="\n")


def truth_to_json(truth: dict) -> str:
    slim = {k: v for k, v in truth.items() if k != "signal"}
    return json.dumps(slim, indent=2, sort_keys=True) + "\n"
