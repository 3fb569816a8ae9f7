import json
import shutil

import pandas as pd
import pytest

from paritygap.cli import main
from paritygap.synthgen import MarketDatasetSpec, gen_market_dataset


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("market")
    gen_market_dataset(root, MarketDatasetSpec(years=(2019, 2020, 2021), day_stride=10, seed=1))
    return root


def run(dataset, out, *extra):
    return main(["run", "--config", str(dataset / "config.ini"), "--out", str(out), *extra])


def test_happy_path(dataset, tmp_path):
    assert run(dataset, tmp_path / "out") == 0
    out = tmp_path / "out"
    for name in ("cells.csv", "curves.csv", "panel.csv", "fit_pooled_ois.json", "loyo_pooled_ois.csv",
                 "sign_table.csv", "dist_stats.json", "run_manifest.json"):
        assert (out / name).exists(), name
    assert not (out / "RUN.partial").exists()
    audit = json.loads((out / "panel_audit.json").read_text())
    assert audit["sub1m"] > 0 and audit["rows"] > 0
    extract = json.loads((out / "extract_audit.json").read_text())
    assert extract["filters"]["SPX"]["few_strikes_expiries"] > 0


def test_pipeline_cells_match_planted_truth(dataset, tmp_path):
    assert run(dataset, tmp_path / "out") == 0
    cells = pd.read_csv(tmp_path / "out" / "cells.csv")
    truth = pd.read_csv(dataset / "truth_cells.csv")
    merged = cells.merge(truth, on=["market", "date", "expiry"])
    assert len(merged) == len(cells)
    assert (merged["b_hat"] - merged["b_true"]).abs().max() < 1e-10
    panel = pd.read_csv(tmp_path / "out" / "panel.csv").merge(truth, on=["market", "date", "expiry"],
                                                              suffixes=("", "_true"))
    assert (panel["cg_bp"] - panel["cg_bp_true"]).abs().max() < 1e-5
    assert (panel["ba_over_tau"] - panel["ba_over_tau_true"]).abs().max() < 1e-6


def test_missing_benchmark_input_fails_before_compute(dataset, tmp_path):
    cfg = tmp_path / "config.ini"
    cfg.write_text((dataset / "config.ini").read_text().replace("dgs = dgs.csv\n", ""))
    for f in dataset.glob("*.csv"):
        shutil.copy(f, tmp_path / f.name)
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--benchmark", "dgs", "--out", str(out)]) == 2
    assert not out.exists()


def test_manifest_is_deterministic_across_runs_and_workers(dataset, tmp_path):
    assert run(dataset, tmp_path / "a", "--workers", "1") == 0
    assert run(dataset, tmp_path / "b", "--workers", "1") == 0
    assert run(dataset, tmp_path / "c", "--workers", "8") == 0
    a = (tmp_path / "a" / "run_manifest.json").read_bytes()
    assert a == (tmp_path / "b" / "run_manifest.json").read_bytes()
    assert a == (tmp_path / "c" / "run_manifest.json").read_bytes()


def test_stagewise_equals_single_shot(dataset, tmp_path):
    assert run(dataset, tmp_path / "one") == 0
    args = ["--config", str(dataset / "config.ini"), "--out", str(tmp_path / "staged")]
    for stage in ("extract", "bootstrap", "panel", "regress", "loyo"):
        assert main([stage, *args]) == 0
    for name in ("cells.csv", "curves.csv", "panel.csv", "fit_pooled_ois.json", "loyo_summary_rut_ois.json"):
        assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "staged" / name).read_bytes(), name


def test_schema_mismatch_is_reported(dataset, tmp_path, caplog):
    for f in dataset.glob("*"):
        shutil.copy(f, tmp_path / f.name)
    text = (tmp_path / "quotes_SPX.csv").read_text().replace("bid,ask", "bid,offer", 1)
    (tmp_path / "quotes_SPX.csv").write_text(text)
    assert main(["extract", "--config", str(tmp_path / "config.ini"), "--out", str(tmp_path / "out")]) == 1
    assert "offer" in caplog.text


def test_failed_stage_leaves_partial_marker(dataset, tmp_path):
    for f in dataset.glob("*"):
        shutil.copy(f, tmp_path / f.name)
    (tmp_path / "vix.csv").write_text("date,value\n")
    assert run(tmp_path, tmp_path / "out") == 1
    # every SPX row loses its volatility, so the pooled dummy is constant
    marker = (tmp_path / "out" / "RUN.partial").read_text()
    assert "failed stage: regress" in marker and "spx_dummy" in marker
    assert (tmp_path / "out" / "panel.csv").exists()
    assert not (tmp_path / "out" / "run_manifest.json").exists()


def test_mc_check_command(tmp_path, capsys):
    status = main(["mc-check", "--paths", "20000", "--steps", "200", "--tolerance", "0.05",
                   "--out", str(tmp_path)])
    assert status == 0
    assert "L_at_T" in capsys.readouterr().out
    report = json.loads((tmp_path / "pathrisk_check.json").read_text())
    assert report["config"]["n_paths"] == 20000


def test_synth_panel_preset(tmp_path):
    assert main(["synth", "--preset", "panel", "--years", "2019:2021", "--day-stride", "20",
                 "--out", str(tmp_path)]) == 0
    assert main(["regress", "--spec", "pooled", "--panel", str(tmp_path / "panel.csv"),
                 "--out", str(tmp_path)]) == 0
    fit = json.loads((tmp_path / "fit_pooled_ois.json").read_text())
    assert set(fit["coefficients"]) >= {"intercept", "nfci"}
