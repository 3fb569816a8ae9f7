from datetime import date

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.base import clone

from paritygap.implied import (CellRejected, ParityForwardRegression, extract_panel, fit_cell,
                               read_cells_csv, write_cells_csv)
from paritygap.synthgen import PlantedCell, gen_quote_cell, strike_grid

from conftest import pair


def exact_cell(b=0.98, f=4000.0, strikes=(3900, 4000, 4100), **kw):
    return [pair(k, 200 + b * (f - k), 200.0, **kw) for k in strikes]


def test_three_strike_example():
    fit = fit_cell(exact_cell(), min_strikes=3)
    assert fit.b_hat == pytest.approx(0.98, abs=1e-12)
    assert fit.f_hat == pytest.approx(4000, abs=1e-9)
    assert fit.r2 == 1.0


def test_unit_invariance():
    base = fit_cell(exact_cell(), min_strikes=3)
    scaled = fit_cell([pair(10 * p.strike, 10 * p.call_mid, 10 * p.put_mid) for p in exact_cell()], min_strikes=3)
    assert scaled.b_hat == pytest.approx(base.b_hat, rel=1e-12)
    assert scaled.f_hat == pytest.approx(10 * base.f_hat, rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.5, 1.05), st.floats(1000, 5000), st.floats(-50, 50))
def test_shift_of_both_mids_leaves_fit_unchanged(b, f, shift):
    strikes = strike_grid(f, 12, 25)
    base = fit_cell([pair(k, 300 + b * (f - k), 300) for k in strikes])
    moved = fit_cell([pair(k, 300 + shift + b * (f - k), 300 + shift) for k in strikes])
    assert moved.b_hat == pytest.approx(base.b_hat, rel=1e-9)
    assert moved.f_hat == pytest.approx(base.f_hat, rel=1e-9)


def test_r2_matches_two_pass_oracle():
    rng = np.random.default_rng(3)
    k = np.linspace(3500, 4500, 25)
    g = 0.97 * (4000 - k) + rng.normal(0, 2.0, k.size)
    model = ParityForwardRegression().fit(k, g)
    slope, icpt = np.polyfit(k, g, 1)
    resid = g - (icpt + slope * k)
    oracle = 1 - resid @ resid / ((g - g.mean()) @ (g - g.mean()))
    assert model.r2_ == pytest.approx(oracle, abs=1e-12)
    assert model.discount_factor_ == pytest.approx(-slope, rel=1e-12)
    np.testing.assert_allclose(model.predict(k), icpt + slope * k, rtol=1e-10)


def test_estimator_api_round_trip():
    model = ParityForwardRegression(weighted=True)
    assert clone(model).get_params() == {"weighted": True}


def test_positive_slope_rejected():
    with pytest.raises(CellRejected) as exc:
        fit_cell([pair(k, 100 + 0.5 * k, 200) for k in range(100, 110)])
    assert exc.value.reason == "nonnegative_slope"


def test_equal_strikes_rejected():
    with pytest.raises(CellRejected) as exc:
        ParityForwardRegression().fit(np.full(5, 100.0), np.arange(5.0))
    assert exc.value.reason == "singular_design"


def test_too_few_strikes_rejected():
    with pytest.raises(CellRejected, match="too_few_strikes"):
        fit_cell(exact_cell(), min_strikes=8)


def test_composition_two_fits_one_rejection():
    good1 = exact_cell(strikes=range(3900, 4100, 20))
    good2 = exact_cell(strikes=range(3900, 4100, 20), expiry=date(2020, 9, 2))
    bad = [pair(k, 100 + 0.5 * k, 200, expiry=date(2020, 12, 2)) for k in range(3900, 4100, 20)]
    fits, rejections = extract_panel([good1, good2, bad])
    assert len(fits) == 2 and [r.reason for r in rejections] == ["nonnegative_slope"]


def test_empty_input():
    assert extract_panel([]) == ([], [])


def test_noiseless_round_trip_and_csv(tmp_path):
    rng = np.random.default_rng(11)
    cells, planted = [], []
    for i in range(200):
        b, f = rng.uniform(0.85, 1.02), rng.uniform(1500, 5000)
        pairs, _ = gen_quote_cell(PlantedCell(b, f, strike_grid(f), tau_days=30 + i))
        cells.append(pairs)
        planted.append((b, f))
    fits, _ = extract_panel(cells)
    got = {c.tau: (c.b_hat, c.f_hat) for c in fits}
    for pairs, (b, f) in zip(cells, planted):
        bh, fh = got[pairs[0].tau]
        assert abs(bh - b) <= 1e-10 and abs(fh - f) <= 1e-10 * f
    write_cells_csv(tmp_path / "cells.csv", fits)
    back = read_cells_csv(tmp_path / "cells.csv")
    assert [(c.b_hat, c.f_hat, c.tau) for c in back] == [(c.b_hat, c.f_hat, c.tau) for c in fits]


def test_workers_do_not_change_output():
    cells = [gen_quote_cell(PlantedCell(0.95, 4000, strike_grid(4000), noise_sd=0.5, seed=s, tau_days=40 + s))[0]
             for s in range(20)]
    assert extract_panel(cells, workers=1) == extract_panel(cells, workers=4)


def test_atm_band_falls_back_to_nearest_strike():
    cell = exact_cell(strikes=range(3000, 3400, 50), f=4000)
    fit = fit_cell(cell, atm_band=0.01)
    assert np.isfinite(fit.ba_med_bp) and "forward_off_strike_range" in fit.flags
