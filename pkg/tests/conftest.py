from datetime import date

import pytest

from paritygap.ingest import OptionQuote, QuotePair


def quote(right, strike, bid, ask, *, d=date(2020, 1, 2), expiry=date(2020, 7, 2), time="15:45", market="SPX"):
    return OptionQuote(market, d, time, expiry, float(strike), right, float(bid), float(ask))


def pair(strike, call_mid, put_mid, spread=0.2, *, d=date(2020, 1, 2), expiry=date(2020, 7, 2), market="SPX"):
    return QuotePair(market, d, expiry, float(strike), float(call_mid), float(put_mid),
                     float(spread), float(spread), (expiry - d).days / 365.25)


@pytest.fixture
def write_text(tmp_path):
    def _write(name, text):
        p = tmp_path / name
        p.write_text(text)
        return p
    return _write
