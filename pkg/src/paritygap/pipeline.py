"""Config-driven orchestration of the carry-gap pipeline.

Every stage reads its inputs from disk and writes its outputs to the run
directory, so running the stages one by one is the same as ``run_pipeline``.
"""
from __future__ import annotations

import configparser
import csv
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from datetime import date
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from ._validation import parallel_map
from .carrygap import aggregate_daily, autocorrelation, distribution_stats, maturity_profile, yearly_summary
from .curves import CurveError, bootstrap_ois, build_dgs_curve, is_anomalous, read_curves_csv, write_curves_csv
from .econometrics import PANEL_COLUMNS, SPECS, build_panel, fit_ols, run_loyo, sign_table
from .implied import extract_panel, read_cells_csv, write_cells_csv
from .ingest import FilterConfig, align_macro, apply_filters, load_quotes, pair_quotes
from .pathrisk import SupportSimConfig, mc_check

logger = logging.getLogger(__name__)

MANIFEST = "run_manifest.json"
PARTIAL = "RUN.partial"
SPEC_ALIASES = {"pooled": "POOLED", "spx": "SPX_ONLY", "rut": "RUT_ONLY"}
SPEC_SLUG = {"POOLED": "pooled", "SPX_ONLY": "spx", "RUT_ONLY": "rut"}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    quotes_spx: Path | None = None
    quotes_rut: Path | None = None
    ois: Path | None = None
    dgs: Path | None = None
    vix: Path | None = None
    rvx: Path | None = None
    nfci: Path | None = None
    snapshot_time: str = "15:45"
    min_mid: float = 0.05
    max_rel_spread: float = 0.25
    min_strikes: int = 8
    atm_band: float = 0.025
    weighted: bool = False
    accrual: str = "unit"
    max_jump_bp: float = 200.0
    benchmark: str = "OIS"
    specs: tuple[str, ...] = SPECS
    loyo: bool = True
    min_test_rows: int = 30
    histogram_bin_bp: float = 2.0
    mc_enabled: bool = False
    mc_sigma: float = 0.2
    mc_horizon: float = 1.0
    mc_paths: int = 200_000
    mc_steps: int = 2_000
    mc_monitoring: str = "bridge"
    mc_tolerance: float = 0.02
    seed: int = 7
    workers: int = 1
    out: Path = Path("out")

    # execution-only settings, kept out of the manifest so results compare across them
    _NOT_ECHOED = ("workers", "out")

    @property
    def filters(self) -> FilterConfig:
        return FilterConfig(self.min_mid, self.max_rel_spread, self.min_strikes)

    @property
    def quote_files(self) -> dict[str, Path]:
        return {m: p for m, p in (("SPX", self.quotes_spx), ("RUT", self.quotes_rut)) if p is not None}

    def echo(self) -> dict:
        out = {}
        for f in fields(self):
            if f.name in self._NOT_ECHOED:
                continue
            v = getattr(self, f.name)
            if isinstance(v, Path):
                v = v.name
            elif isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        return out

    def validate(self) -> None:
        """Fail before any compute when a required input is absent."""
        bench = self.benchmark
        if bench not in ("OIS", "DGS"):
            raise ConfigError(f"benchmark must be OIS or DGS, got {bench!r}")
        needed = {bench.lower(): getattr(self, bench.lower()), "nfci": self.nfci}
        if self.quotes_spx is not None:
            needed["vix"] = self.vix
        if self.quotes_rut is not None:
            needed["rvx"] = self.rvx
        if not self.quote_files:
            raise ConfigError("no quote files configured")
        needed.update({f"quotes_{m.lower()}": p for m, p in self.quote_files.items()})
        for name, p in needed.items():
            if p is None:
                raise ConfigError(f"benchmark {bench} needs input {name!r}, not configured")
            if not Path(p).exists():
                raise ConfigError(f"input {name!r} not found: {p}")
        bad = [s for s in self.specs if s not in SPECS]
        if bad:
            raise ConfigError(f"unknown specs {bad}")


def parse_specs(text: str) -> tuple[str, ...]:
    text = text.strip().lower()
    if text == "all":
        return SPECS
    out = []
    for part in text.split(","):
        part = part.strip()
        out.append(SPEC_ALIASES.get(part, part.upper()))
    return tuple(out)


def load_config(path=None, **overrides) -> RunConfig:
    """Read an INI config; relative input paths resolve against its directory.

    Keyword overrides (``None`` values ignored) win over the file.
    """
    cfg = RunConfig()
    values: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config not found: {path}")
        parser = configparser.ConfigParser()
        parser.read(path)
        base = path.parent
        types = {f.name: f.type for f in fields(RunConfig)}
        for section in parser.sections():
            for key, raw in parser[section].items():
                name = key if section != "mc" or key.startswith("mc_") else f"mc_{key}"
                if name not in types:
                    raise ConfigError(f"unknown config key [{section}] {key}")
                values[name] = _coerce(name, raw, base)
    values.update({k: v for k, v in overrides.items() if v is not None})
    if isinstance(values.get("specs"), str):
        values["specs"] = parse_specs(values["specs"])
    if "benchmark" in values:
        values["benchmark"] = str(values["benchmark"]).upper()
    for k in ("out",) + tuple(f.name for f in fields(RunConfig) if f.name.startswith("quotes_")) + (
            "ois", "dgs", "vix", "rvx", "nfci"):
        if k in values and values[k] is not None:
            values[k] = Path(values[k])
    return replace(cfg, **values)


def _coerce(name: str, raw: str, base: Path):
    raw = raw.strip()
    default = getattr(RunConfig, name, None)
    if name in ("quotes_spx", "quotes_rut", "ois", "dgs", "vix", "rvx", "nfci", "out"):
        p = Path(raw)
        return p if p.is_absolute() else base / p
    if name == "specs":
        return parse_specs(raw)
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


# -- io helpers ----------------------------------------------------------------


def _json_default(o):
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (date, Path)):
        return str(o)
    raise TypeError(type(o))


def _clean(o):
    if isinstance(o, float) and not math.isfinite(o):
        return None
    if isinstance(o, dict):
        return {str(k): _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    return o


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_clean(obj), indent=2, sort_keys=True, default=_json_default) + "\n")


def write_frame(path, frame: pd.DataFrame) -> None:
    frame.to_csv(path, index=False, lineterminator="\n")


def read_panel_csv(path) -> pd.DataFrame:
    frame = pd.read_csv(path)
    missing = [c for c in PANEL_COLUMNS if c not in frame.columns]
    if missing:
        extra = [c for c in frame.columns if c not in PANEL_COLUMNS]
        raise ValueError(f"{path}: panel schema mismatch (missing {missing}, unexpected {extra})")
    frame["date"] = pd.to_datetime(frame["date"]).dt.date
    frame["expiry"] = pd.to_datetime(frame["expiry"]).dt.date
    return frame


def sha256(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# -- stages ---------------------------------------------------------------------


def _extract_day(args):
    market, day, quotes, filters, atm_band, weighted = args
    pairs, n_dupes = pair_quotes(quotes)
    groups, counts = apply_filters(pairs, filters)
    fits, rejections = extract_panel(groups, min_strikes=filters.min_strikes, atm_band=atm_band, weighted=weighted)
    counts = dict(counts, duplicate_quotes=n_dupes, pairs=len(pairs))
    return market, day, fits, rejections, counts


def stage_extract(cfg: RunConfig) -> list[Path]:
    """Quotes -> pairs -> filters -> per-expiry discount-factor fits."""
    out = Path(cfg.out)
    jobs = []
    audit: dict = {"skipped_rows": {}, "filters": {}}
    for market, path in sorted(cfg.quote_files.items()):
        quotes, n_skipped = load_quotes(path, market, cfg.snapshot_time)
        audit["skipped_rows"][market] = n_skipped
        by_day: dict = {}
        for q in quotes:
            by_day.setdefault(q.date, []).append(q)
        for day in sorted(by_day):
            jobs.append((market, day, by_day[day], cfg.filters, cfg.atm_band, cfg.weighted))
    results = parallel_map(_extract_day, jobs, workers=cfg.workers, chunksize=16)
    fits, rejections = [], []
    totals: dict = {}
    for market, _, f, r, counts in results:
        fits.extend(f)
        rejections.extend(r)
        agg = totals.setdefault(market, {})
        for k, v in counts.items():
            agg[k] = agg.get(k, 0) + v
    fits.sort(key=lambda c: (c.market, c.date, c.tau))
    audit["filters"] = totals
    audit["cells"] = len(fits)
    audit["rejected_cells"] = len(rejections)
    if fits:
        r2 = np.array([c.r2 for c in fits])
        audit["cell_r2"] = {m: {"median": float(np.median([c.r2 for c in fits if c.market == m])),
                                "min": float(min(c.r2 for c in fits if c.market == m))}
                            for m in sorted({c.market for c in fits})}
        audit["cell_r2"]["ALL"] = {"median": float(np.median(r2)), "min": float(r2.min())}
    write_cells_csv(out / "cells.csv", fits)
    write_frame(out / "rejections.csv", pd.DataFrame(
        [(r.market, r.date.isoformat(), r.expiry.isoformat(), r.reason) for r in rejections],
        columns=["market", "date", "expiry", "reason"]))
    write_json(out / "extract_audit.json", audit)
    return [out / "cells.csv", out / "rejections.csv", out / "extract_audit.json"]


def _macro(cfg: RunConfig, require=()):
    return align_macro(ois=cfg.ois, dgs=cfg.dgs, vix=cfg.vix, rvx=cfg.rvx, nfci=cfg.nfci, require=require)


def stage_bootstrap(cfg: RunConfig) -> list[Path]:
    """Benchmark curve per date; dates whose recovery fails are logged and skipped."""
    out = Path(cfg.out)
    macro = _macro(cfg, require=(cfg.benchmark.lower(),))
    curves, failed = [], []
    for d, quotes in sorted(macro.rates(cfg.benchmark).items()):
        try:
            if cfg.benchmark == "OIS":
                curves.append(bootstrap_ois(quotes, accrual=cfg.accrual, as_of=d))
            else:
                curves.append(build_dgs_curve(quotes, as_of=d))
        except CurveError as exc:
            failed.append({"date": d.isoformat(), "error": str(exc)})
    anomalous = [c.as_of.isoformat() for c in curves if is_anomalous(c, cfg.max_jump_bp)]
    write_curves_csv(out / "curves.csv", curves)
    write_json(out / "curve_audit.json", {"benchmark": cfg.benchmark, "curves": len(curves),
                                          "failed": failed, "anomalous": anomalous})
    return [out / "curves.csv", out / "curve_audit.json"]


def stage_panel(cfg: RunConfig) -> list[Path]:
    """Cells + curves + macro -> regression panel and carry-gap statistics."""
    out = Path(cfg.out)
    cells = read_cells_csv(out / "cells.csv")
    curves = {d: c for (d, kind), c in read_curves_csv(out / "curves.csv").items() if kind == cfg.benchmark}
    macro = _macro(cfg, require=(cfg.benchmark.lower(), "nfci"))
    panel, audit = build_panel(cells, curves, macro, cfg.benchmark, max_jump_bp=cfg.max_jump_bp)
    paths = [out / "panel.csv", out / "carrygap_panel.csv", out / "daily_median.csv",
             out / "daily_median_pooled.csv", out / "dist_stats.json", out / "histogram.csv",
             out / "maturity_profile.csv", out / "panel_audit.json"]
    write_frame(paths[0], panel.loc[:, list(PANEL_COLUMNS)])
    cg = panel.assign(ba_med_over_tau=panel["ba_over_tau"])
    write_frame(paths[1], cg.loc[:, ["market", "date", "expiry", "tau", "bin", "cg_bp", "ba_med_over_tau"]])
    daily = aggregate_daily(panel)
    pooled = aggregate_daily(panel, pooled=True)
    write_frame(paths[2], daily)
    write_frame(paths[3], pooled)
    stats_out: dict = {}
    hists = []
    for scope, frame in [("ALL", daily)] + [(m, daily[daily["market"] == m]) for m in sorted(daily["market"].unique())]:
        if frame.empty:
            continue
        st = distribution_stats(frame["cg_bp_median"], cfg.histogram_bin_bp)
        hists.append(st.pop("histogram").assign(scope=scope))
        st["autocorrelation"] = autocorrelation(frame.sort_values("date")["cg_bp_median"]) if scope != "ALL" else {}
        stats_out[scope] = st
    if not panel.empty:
        stats_out["yearly"] = yearly_summary(daily).to_dict(orient="records")
    write_json(paths[4], stats_out)
    write_frame(paths[5], pd.concat(hists, ignore_index=True) if hists else pd.DataFrame())
    write_frame(paths[6], maturity_profile(panel) if not panel.empty else pd.DataFrame())
    write_json(paths[7], audit)
    return paths


def _panel_path(cfg: RunConfig, panel=None) -> Path:
    return Path(panel) if panel is not None else Path(cfg.out) / "panel.csv"


def stage_regress(cfg: RunConfig, panel=None) -> list[Path]:
    rows = read_panel_csv(_panel_path(cfg, panel))
    paths = []
    for spec in cfg.specs:
        fit = fit_ols(rows, spec, cfg.benchmark)
        p = Path(cfg.out) / f"fit_{SPEC_SLUG[spec]}_{cfg.benchmark.lower()}.json"
        write_json(p, fit.to_dict())
        paths.append(p)
    return paths


def stage_loyo(cfg: RunConfig, panel=None) -> list[Path]:
    rows = read_panel_csv(_panel_path(cfg, panel))
    out = Path(cfg.out)
    paths, signs = [], []
    for spec in cfg.specs:
        report = run_loyo(rows, spec, cfg.benchmark, min_test_rows=cfg.min_test_rows, workers=cfg.workers)
        slug = f"{SPEC_SLUG[spec]}_{cfg.benchmark.lower()}"
        write_frame(out / f"loyo_{slug}.csv", report.fold_frame())
        write_json(out / f"loyo_summary_{slug}.json", report.to_dict())
        paths += [out / f"loyo_{slug}.csv", out / f"loyo_summary_{slug}.json"]
        for name, text in sign_table(report).items():
            pos, neg = report.sign_counts[name]
            signs.append({"spec": spec, "benchmark": cfg.benchmark, "coefficient": name,
                          "positive": pos, "negative": neg, "summary": text})
    write_frame(out / "sign_table.csv", pd.DataFrame(signs))
    paths.append(out / "sign_table.csv")
    return paths


def stage_mc_check(cfg: RunConfig) -> list[Path]:
    sim = SupportSimConfig(sigma=cfg.mc_sigma, horizon=cfg.mc_horizon, n_paths=cfg.mc_paths,
                           n_steps=cfg.mc_steps, seed=cfg.seed, monitoring=cfg.mc_monitoring)
    report = mc_check(sim, tolerance=cfg.mc_tolerance, workers=cfg.workers)
    p = Path(cfg.out) / "pathrisk_check.json"
    write_json(p, report)
    return [p]


STAGES = {
    "extract": stage_extract,
    "bootstrap": stage_bootstrap,
    "panel": stage_panel,
    "regress": stage_regress,
    "loyo": stage_loyo,
    "mc-check": stage_mc_check,
}


def write_manifest(cfg: RunConfig, files) -> Path:
    out = Path(cfg.out)
    inputs = {}
    for name in ("quotes_spx", "quotes_rut", "ois", "dgs", "vix", "rvx", "nfci"):
        p = getattr(cfg, name)
        if p is not None and Path(p).exists():
            inputs[name] = {"file": Path(p).name, "sha256": sha256(p)}
    manifest = {
        "version": __version__,
        "config": cfg.echo(),
        "inputs": inputs,
        "outputs": {Path(f).name: sha256(f) for f in sorted(set(files), key=lambda f: Path(f).name)},
    }
    path = out / MANIFEST
    write_json(path, manifest)
    return path


def run_pipeline(cfg: RunConfig) -> tuple[int, Path | None]:
    """Run every configured stage; returns ``(exit_status, manifest_path)``.

    A failing stage leaves its predecessors' outputs in place next to a
    ``RUN.partial`` marker naming the stage, and returns status 1.
    """
    cfg.validate()
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    marker = out / PARTIAL
    marker.unlink(missing_ok=True)
    (out / MANIFEST).unlink(missing_ok=True)
    order = ["extract", "bootstrap", "panel", "regress"]
    if cfg.loyo:
        order.append("loyo")
    if cfg.mc_enabled:
        order.append("mc-check")
    files: list[Path] = []
    for stage in order:
        try:
            logger.info("stage %s", stage)
            files += STAGES[stage](cfg)
        except Exception as exc:
            logger.exception("stage %s failed", stage)
            marker.write_text(f"failed stage: {stage}\nerror: {exc!r}\n")
            return 1, None
    return 0, write_manifest(cfg, files)
