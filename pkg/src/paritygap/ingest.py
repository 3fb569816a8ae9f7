"""Loading and alignment of option quotes and macro series.

Quote files carry one row per (date, time, expiry, right, strike) NBBO
snapshot; macro files are plain ``date,value`` or ``date,tenor_years,rate_pct``
tables. Everything here works on plain Python containers so the downstream
stages can be fanned out per (market, date) without shared state.
"""
from __future__ import annotations

import bisect
import csv
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterable, Mapping, Sequence

logger = logging.getLogger(__name__)

MARKETS = ("SPX", "RUT")
DAYS_PER_YEAR = 365.25

QUOTE_HEADER = ("date", "time", "expiry", "right", "strike", "bid", "ask")
SERIES_HEADER = ("date", "value")
TENOR_HEADER = ("date", "tenor_years", "rate_pct")


class SchemaError(ValueError):
    """Raised when an input file does not carry the expected header."""


@dataclass(frozen=True)
class OptionQuote:
    market: str
    date: date
    snapshot_time: str
    expiry: date
    strike: float
    right: str  # "C" or "P"
    bid: float
    ask: float

    @property
    def mid(self) -> float:
        return 0.5 * (self.bid + self.ask)

    @property
    def spread(self) -> float:
        return self.ask - self.bid


@dataclass(frozen=True)
class QuotePair:
    market: str
    date: date
    expiry: date
    strike: float
    call_mid: float
    put_mid: float
    call_spread: float
    put_spread: float
    tau: float

    @property
    def key(self) -> tuple:
        return (self.market, self.date, self.expiry, self.strike)


@dataclass(frozen=True)
class FilterConfig:
    """Eligibility thresholds for call/put pairs.

    The defaults are declared choices; nothing in the source data pins them.
    """

    min_mid: float = 0.05
    max_rel_spread: float = 0.25
    min_strikes: int = 8


def year_fraction(start: date, end: date) -> float:
    """ACT/365.25 year fraction between two calendar dates."""
    return (end - start).days / DAYS_PER_YEAR


def _parse_time(text: str) -> str:
    hh, mm = text.strip().split(":")
    h, m = int(hh), int(mm)
    if not (0 <= h < 24 and 0 <= m < 60):
        raise ValueError(f"bad time {text!r}")
    return f"{h:02d}:{m:02d}"


def _check_header(path: Path, found: Sequence[str] | None, expected: Sequence[str]) -> None:
    got = [h.strip() for h in (found or [])]
    if got != list(expected):
        missing = [c for c in expected if c not in got]
        extra = [c for c in got if c not in expected]
        raise SchemaError(
            f"{path}: expected header {','.join(expected)!r}, found {','.join(got)!r} "
            f"(missing {missing}, unexpected {extra})"
        )


def load_quotes(path, market: str, snapshot_time: str = "15:45"):
    """Read a quote CSV and keep the rows stamped at ``snapshot_time``.

    Returns
    -------
    quotes : list of OptionQuote
    n_skipped : int
        Rows that failed to parse or violated ``ask >= bid >= 0``,
        ``strike > 0`` or ``expiry > date``.
    """
    path = Path(path)
    if market not in MARKETS:
        raise ValueError(f"unknown market {market!r}")
    snapshot_time = _parse_time(snapshot_time)
    quotes: list[OptionQuote] = []
    n_skipped = 0
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        _check_header(path, next(reader, None), QUOTE_HEADER)
        for row in reader:
            if not row:
                continue
            try:
                d, t, exp, right, strike, bid, ask = row
                t = _parse_time(t)
                q = OptionQuote(
                    market=market,
                    date=date.fromisoformat(d.strip()),
                    snapshot_time=t,
                    expiry=date.fromisoformat(exp.strip()),
                    strike=float(strike),
                    right=right.strip().upper(),
                    bid=float(bid),
                    ask=float(ask),
                )
            except ValueError:
                n_skipped += 1
                continue
            if q.snapshot_time != snapshot_time:
                continue
            if not _valid_quote(q):
                n_skipped += 1
                continue
            quotes.append(q)
    if n_skipped:
        logger.warning("%s: skipped %d malformed quote rows", path, n_skipped)
    return quotes, n_skipped


def _valid_quote(q: OptionQuote) -> bool:
    finite = all(math.isfinite(v) for v in (q.strike, q.bid, q.ask))
    return (
        finite
        and q.right in ("C", "P")
        and q.bid >= 0.0
        and q.ask >= q.bid
        and q.strike > 0.0
        and q.expiry > q.date
    )


def pair_quotes(quotes: Iterable[OptionQuote]):
    """Match calls with puts at the same (expiry, strike).

    Duplicate quotes for one (expiry, strike, right) keep the tighter
    market; each discarded duplicate counts as one warning.

    Returns ``(pairs, n_warnings)`` with pairs sorted by (expiry, strike).
    """
    best: dict[tuple, OptionQuote] = {}
    n_warnings = 0
    markets_dates = set()
    for q in quotes:
        markets_dates.add((q.market, q.date))
        k = (q.expiry, q.strike, q.right)
        prev = best.get(k)
        if prev is None:
            best[k] = q
            continue
        n_warnings += 1
        if q.spread < prev.spread:
            best[k] = q
    if len(markets_dates) > 1:
        raise ValueError("pair_quotes expects quotes from a single (market, date)")

    pairs = []
    for (expiry, strike, right), call in best.items():
        if right != "C":
            continue
        put = best.get((expiry, strike, "P"))
        if put is None:
            continue
        pairs.append(
            QuotePair(
                market=call.market,
                date=call.date,
                expiry=expiry,
                strike=strike,
                call_mid=call.mid,
                put_mid=put.mid,
                call_spread=call.spread,
                put_spread=put.spread,
                tau=year_fraction(call.date, expiry),
            )
        )
    pairs.sort(key=lambda p: (p.expiry, p.strike))
    return pairs, n_warnings


def flatten_pairs(pairs: Iterable[QuotePair], snapshot_time: str = "15:45") -> list[OptionQuote]:
    """Inverse of :func:`pair_quotes`: bid and ask sit half a spread around each mid."""
    out = []
    for p in pairs:
        for right, mid, spread in (("C", p.call_mid, p.call_spread), ("P", p.put_mid, p.put_spread)):
            out.append(
                OptionQuote(p.market, p.date, snapshot_time, p.expiry, p.strike, right,
                            mid - spread / 2, mid + spread / 2)
            )
    return out


def apply_filters(pairs: Iterable[QuotePair], cfg: FilterConfig | None = None):
    """Drop illiquid pairs, then expiries left with too few strikes.

    Returns ``(groups, counts)`` where ``groups`` maps expiry to its
    surviving pairs and ``counts`` records rejections per filter.
    """
    cfg = cfg or FilterConfig()
    counts = {"low_mid": 0, "wide_spread": 0, "few_strikes_pairs": 0, "few_strikes_expiries": 0}
    groups: dict[date, list[QuotePair]] = defaultdict(list)
    for p in pairs:
        if min(p.call_mid, p.put_mid) < cfg.min_mid:
            counts["low_mid"] += 1
            continue
        if (p.call_spread / p.call_mid > cfg.max_rel_spread
                or p.put_spread / p.put_mid > cfg.max_rel_spread):
            counts["wide_spread"] += 1
            continue
        groups[p.expiry].append(p)
    kept = {}
    for expiry in sorted(groups):
        grp = groups[expiry]
        if len(grp) < cfg.min_strikes:
            counts["few_strikes_expiries"] += 1
            counts["few_strikes_pairs"] += len(grp)
            continue
        kept[expiry] = grp
    return kept, counts


# -- macro series ---------------------------------------------------------


def load_series(path) -> tuple[dict[date, float], int]:
    """Read a ``date,value`` file. Later duplicates overwrite earlier ones."""
    path = Path(path)
    out: dict[date, float] = {}
    n_dupes = 0
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        _check_header(path, next(reader, None), SERIES_HEADER)
        for row in reader:
            if not row or not row[1].strip() or row[1].strip() == ".":
                continue
            d = date.fromisoformat(row[0].strip())
            if d in out:
                n_dupes += 1
            out[d] = float(row[1])
    return out, n_dupes


def load_tenor_series(path) -> tuple[dict[date, dict[float, float]], int]:
    """Read a ``date,tenor_years,rate_pct`` file into ``date -> {tenor: rate}``."""
    path = Path(path)
    out: dict[date, dict[float, float]] = defaultdict(dict)
    n_dupes = 0
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        _check_header(path, next(reader, None), TENOR_HEADER)
        for row in reader:
            if not row:
                continue
            d = date.fromisoformat(row[0].strip())
            tenor = float(row[1])
            if tenor in out[d]:
                n_dupes += 1
            out[d][tenor] = float(row[2])
    return {d: dict(sorted(v.items())) for d, v in sorted(out.items())}, n_dupes


def forward_fill(releases: Mapping[date, float], dates: Iterable[date]) -> dict[date, float]:
    """Carry the latest release dated on or before each target date."""
    rel_dates = sorted(releases)
    out = {}
    for d in dates:
        i = bisect.bisect_right(rel_dates, d)
        if i:
            out[d] = releases[rel_dates[i - 1]]
    return out


@dataclass
class MacroSeries:
    """Daily macro inputs keyed by business date."""

    ois_par: dict[date, dict[float, float]] = field(default_factory=dict)
    dgs_yield: dict[date, dict[float, float]] = field(default_factory=dict)
    vix: dict[date, float] = field(default_factory=dict)
    rvx: dict[date, float] = field(default_factory=dict)
    nfci: dict[date, float] = field(default_factory=dict)
    n_duplicates: int = 0

    def rates(self, benchmark: str) -> dict[date, dict[float, float]]:
        return self.ois_par if benchmark == "OIS" else self.dgs_yield

    def vol(self, market: str, d: date) -> float | None:
        return (self.vix if market == "SPX" else self.rvx).get(d)

    def usable(self, d: date, market: str, benchmark: str = "OIS") -> bool:
        """True when every regressor input exists for ``market`` on ``d``."""
        return (
            d in self.rates(benchmark)
            and self.vol(market, d) is not None
            and d in self.nfci
        )

    @property
    def dates(self) -> list[date]:
        s = set(self.ois_par) | set(self.dgs_yield) | set(self.vix) | set(self.rvx)
        return sorted(s)


def align_macro(
    *,
    ois=None,
    dgs=None,
    vix=None,
    rvx=None,
    nfci=None,
    require: Sequence[str] = ("vix", "rvx", "nfci"),
) -> MacroSeries:
    """Load and align the macro inputs.

    Each argument is a path or ``None``. Series named in ``require`` must be
    given. NFCI releases are forward-filled onto the union of dates seen in
    the other series, never reaching past a release into earlier dates.
    """
    given = {"ois": ois, "dgs": dgs, "vix": vix, "rvx": rvx, "nfci": nfci}
    for name in require:
        if given.get(name) is None:
            raise FileNotFoundError(f"required macro series {name!r} not provided")

    m = MacroSeries()
    if ois is not None:
        m.ois_par, n = load_tenor_series(ois)
        m.n_duplicates += n
    if dgs is not None:
        m.dgs_yield, n = load_tenor_series(dgs)
        m.n_duplicates += n
    for name in ("vix", "rvx"):
        if given[name] is not None:
            values, n = load_series(given[name])
            m.n_duplicates += n
            bad = [d for d, v in values.items() if not v > 0]
            for d in bad:
                del values[d]
            setattr(m, name, values)
    if nfci is not None:
        releases, n = load_series(nfci)
        m.n_duplicates += n
        m.nfci = forward_fill(releases, sorted(set(m.dates) | set(releases)))
    if m.n_duplicates:
        logger.warning("macro inputs: %d duplicate dates, last occurrence kept", m.n_duplicates)
    return m


def write_quotes_csv(path, quotes: Iterable[OptionQuote]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(QUOTE_HEADER)
        for q in quotes:
            w.writerow([q.date.isoformat(), q.snapshot_time, q.expiry.isoformat(),
                        q.right, repr(q.strike), repr(q.bid), repr(q.ask)])


def write_series_csv(path, values: Mapping[date, float]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SERIES_HEADER)
        for d in sorted(values):
            w.writerow([d.isoformat(), repr(float(values[d]))])


def write_tenor_csv(path, values: Mapping[date, Mapping[float, float]]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TENOR_HEADER)
        for d in sorted(values):
            for tenor, rate in sorted(values[d].items()):
                w.writerow([d.isoformat(), repr(float(tenor)), repr(float(rate))])
