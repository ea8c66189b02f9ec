"""Ingestion, gap repair, serialization round-trips, and response values."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from candlewalk.errors import CandleDataError, FetchError, GapError, ResponseDomainError
from candlewalk.market_data import (
    Candle,
    CandleFormat,
    CandleSeries,
    EndpointConfig,
    GapPolicy,
    RateLimited,
    compute_response,
    fetch_remote_candles,
    parse_candles,
    serialize_candles,
    validate_and_repair,
)
from candlewalk.timeutil import HOUR

BASE = 1514764800  # 2018-01-01 00:00:00 UTC, hour-aligned


def make_series(closes, start=BASE, symbol="TEST", volumes=None, extra=None):
    closes = np.asarray(closes, dtype=float)
    n = len(closes)
    ts = start + HOUR * np.arange(n)
    vol = np.ones(n) if volumes is None else np.asarray(volumes, dtype=float)
    return CandleSeries(symbol, ts, closes, closes * 1.01, closes * 0.99, closes, vol, extra)


def csv_of(rows, header="timestamp,open,high,low,close,volume"):
    return header + "\n" + "\n".join(rows) + "\n"


class TestParse:
    def test_unix_timestamps(self):
        text = csv_of([f"{BASE},100,110,90,105,3.5", f"{BASE + HOUR},105,115,95,108,2.0"])
        s = parse_candles(text, CandleFormat(symbol="BTC-USD"))
        assert s.symbol == "BTC-USD"
        assert list(s.timestamps) == [BASE, BASE + HOUR]
        assert s.closes[1] == 108.0

    def test_iso_timestamps_autodetected(self):
        text = csv_of([
            "2018-01-01T00:00:00Z,100,110,90,105,3.5",
            "2018-01-01 01:00:00,105,115,95,108,2.0",  # space separator also accepted
        ])
        s = parse_candles(text)
        assert list(s.timestamps) == [BASE, BASE + HOUR]

    def test_rows_sorted_on_ingest(self):
        text = csv_of([f"{BASE + HOUR},105,115,95,108,2.0", f"{BASE},100,110,90,105,3.5"])
        s = parse_candles(text)
        assert list(s.timestamps) == [BASE, BASE + HOUR]
        assert s.opens[0] == 100.0

    def test_extra_columns_and_missing_values(self):
        text = csv_of(
            [f"{BASE},100,110,90,105,3.5,42.0", f"{BASE + HOUR},105,115,95,108,2.0,"],
            header="timestamp,open,high,low,close,volume,hashrate",
        )
        s = parse_candles(text)
        assert s.extra_columns["hashrate"][0] == 42.0
        assert math.isnan(s.extra_columns["hashrate"][1])

    def test_field_count_error_names_line(self):
        text = csv_of([f"{BASE},100,110,90,105,3.5", f"{BASE + HOUR},105,115,95"])
        with pytest.raises(CandleDataError, match="line 3"):
            parse_candles(text)

    def test_malformed_number_names_line(self):
        text = csv_of([f"{BASE},100,110,90,oops,3.5"])
        with pytest.raises(CandleDataError, match="line 2"):
            parse_candles(text)

    def test_nonpositive_price_rejected(self):
        text = csv_of([f"{BASE},100,110,0,105,3.5"])
        with pytest.raises(CandleDataError, match="non-positive price"):
            parse_candles(text)

    def test_negative_volume_rejected(self):
        text = csv_of([f"{BASE},100,110,90,105,-1"])
        with pytest.raises(CandleDataError, match="negative volume"):
            parse_candles(text)

    def test_duplicate_timestamp_rejected(self):
        text = csv_of([f"{BASE},100,110,90,105,3.5", f"{BASE},101,111,91,106,2.5"])
        with pytest.raises(CandleDataError, match="duplicate timestamp"):
            parse_candles(text)

    def test_bad_header_rejected(self):
        with pytest.raises(CandleDataError, match="bad header"):
            parse_candles("time,o,h,l,c,v\n1,2,3,4,5,6\n")

    def test_ohlc_ordering_not_checked_at_parse(self):
        # high below close: tolerated by the parser, caught by validate_and_repair
        text = csv_of([f"{BASE},100,101,90,105,3.5"])
        s = parse_candles(text)
        with pytest.raises(CandleDataError, match="OHLC ordering"):
            validate_and_repair(s)


price = st.floats(min_value=1e-3, max_value=1e9, allow_nan=False, allow_infinity=False)
volume = st.floats(min_value=0, max_value=1e9, allow_nan=False, allow_infinity=False)


@st.composite
def candle_series(draw):
    n = draw(st.integers(min_value=1, max_value=40))
    candles = []
    for i in range(n):
        a, b = draw(price), draw(price)
        lo, hi = min(a, b), max(a, b)
        candles.append(Candle(BASE + i * HOUR, a, hi, lo, b, draw(volume)))
    return CandleSeries.from_candles("PROP", candles)


@given(candle_series())
@settings(max_examples=60, deadline=None)
def test_serialize_parse_round_trip(series):
    text = serialize_candles(series)
    back = parse_candles(text, CandleFormat(symbol=series.symbol))
    assert np.array_equal(back.timestamps, series.timestamps)
    for col in ("opens", "highs", "lows", "closes", "volumes"):
        assert np.array_equal(getattr(back, col), getattr(series, col)), col


def test_serialize_round_trip_with_extras():
    extra = {"netflow": np.array([1.5, math.nan, -2.25])}
    s = make_series([100.0, 101.0, 102.0], extra=extra)
    back = parse_candles(serialize_candles(s))
    assert back.extra_columns["netflow"][0] == 1.5
    assert math.isnan(back.extra_columns["netflow"][1])
    assert back.extra_columns["netflow"][2] == -2.25


class TestRepair:
    def test_clean_series_passthrough(self):
        s = make_series([100, 101, 102])
        out, report = validate_and_repair(s)
        assert report == []
        assert out is s

    def test_gap_forward_filled(self):
        ts = np.array([BASE, BASE + HOUR, BASE + 4 * HOUR], dtype=np.int64)
        s = CandleSeries("T", ts, np.array([100., 101, 104]), np.array([110., 111, 114]),
                         np.array([90., 91, 94]), np.array([105., 106, 109]), np.array([1., 1, 1]),
                         {"x": np.array([7.0, 8.0, 9.0])})
        out, report = validate_and_repair(s)
        assert len(out) == 5
        assert [r.timestamp for r in report] == [BASE + 2 * HOUR, BASE + 3 * HOUR]
        assert all(r.action == "forward_fill" for r in report)
        # synthetic bars carry the previous close at zero volume, extras missing
        for i in (2, 3):
            assert out.opens[i] == out.highs[i] == out.lows[i] == out.closes[i] == 106.0
            assert out.volumes[i] == 0.0
            assert math.isnan(out.extra_columns["x"][i])
        assert out.closes[4] == 109.0

    def test_gap_beyond_limit_is_error(self):
        ts = np.array([BASE, BASE + 8 * HOUR], dtype=np.int64)
        s = CandleSeries("T", ts, *(np.array([100.0, 101.0]) for _ in range(4)), np.array([1.0, 1.0]))
        with pytest.raises(GapError, match="7 bars"):
            validate_and_repair(s, GapPolicy(max_gap_hours=6))

    def test_reject_mode(self):
        ts = np.array([BASE, BASE + 2 * HOUR], dtype=np.int64)
        s = CandleSeries("T", ts, *(np.array([100.0, 101.0]) for _ in range(4)), np.array([1.0, 1.0]))
        with pytest.raises(GapError):
            validate_and_repair(s, GapPolicy(mode="reject"))

    def test_unaligned_timestamp_is_error(self):
        ts = np.array([BASE + 17], dtype=np.int64)
        s = CandleSeries("T", ts, *(np.array([100.0]) for _ in range(4)), np.array([1.0]))
        with pytest.raises(CandleDataError, match="not aligned"):
            validate_and_repair(s)


class TestResponse:
    def test_paper_mode_values(self):
        s = make_series([8499.90, 8815.08])
        r = compute_response(s, mode="paper")
        # (ln 8815.08 - ln 8499.90) / ln 8499.90, 50-digit arithmetic
        assert r.values[0] == pytest.approx(0.0040241222819689104644, rel=1e-15)
        assert list(r.timestamps) == [BASE + HOUR]

    def test_plain_log_mode_values(self):
        s = make_series([8499.90, 8815.08])
        r = compute_response(s, mode="plain_log")
        assert r.values[0] == pytest.approx(0.036409492527059879515, rel=1e-15)

    def test_falling_price(self):
        s = make_series([8335.12, 7797.50])
        assert compute_response(s).values[0] == pytest.approx(-0.0073851375236369534987, rel=1e-15)
        assert compute_response(s, mode="plain_log").values[0] == pytest.approx(
            -0.066674743719874390497, rel=1e-15)

    def test_paper_mode_rejects_close_at_or_below_one(self):
        s = make_series([2.0, 0.8, 2.0])
        with pytest.raises(ResponseDomainError, match="plain_log"):
            compute_response(s, mode="paper")

    def test_plain_log_tolerates_sub_unit_prices(self):
        s = make_series([2.0, 0.5])
        r = compute_response(s, mode="plain_log")
        assert r.values[0] == pytest.approx(math.log(0.25), rel=1e-12)

    def test_unknown_mode(self):
        with pytest.raises(ValueError, match="response mode"):
            compute_response(make_series([2.0, 3.0]), mode="geometric")

    def test_timestamps_are_the_later_bar(self):
        s = make_series([10.0, 11.0, 12.0, 13.0])
        r = compute_response(s)
        assert list(r.timestamps) == [BASE + HOUR, BASE + 2 * HOUR, BASE + 3 * HOUR]
        assert r.value_at(BASE + 2 * HOUR) == r.values[1]


class FakeTransport:
    """Scripted page server: candle rows keyed by hour, optional failure schedule."""

    def __init__(self, rows, failures=()):
        self.rows = {r[0]: r for r in rows}
        self.failures = list(failures)
        self.urls = []

    def __call__(self, url, timeout):
        self.urls.append(url)
        if self.failures:
            exc = self.failures.pop(0)
            if exc is not None:
                raise exc
        import json as _json
        from urllib.parse import parse_qs, urlparse
        from candlewalk.timeutil import parse_timestamp
        q = parse_qs(urlparse(url).query)
        lo = parse_timestamp(q["start"][0])
        hi = parse_timestamp(q["end"][0])
        page = [self.rows[t] for t in range(lo, hi + HOUR, HOUR) if t in self.rows]
        return _json.dumps(page).encode()


def coinbase_row(ts, close):
    # endpoint order: [time, low, high, open, close, volume]
    return [ts, close * 0.99, close * 1.01, close, close, 1.0]


def test_fetch_paginates_and_assembles():
    rows = [coinbase_row(BASE + i * HOUR, 100.0 + i) for i in range(10)]
    transport = FakeTransport(rows)
    cfg = EndpointConfig(base_url="https://x", product_id="BTC-USD", page_size=4)
    s = fetch_remote_candles("BTC-USD", BASE, BASE + 10 * HOUR, cfg, transport=transport, sleep=lambda _: None)
    assert len(transport.urls) == 3  # 4 + 4 + 2 hours
    assert len(s) == 10
    assert s.closes[9] == 109.0


def test_fetch_fills_missing_hours():
    rows = [coinbase_row(BASE, 100.0), coinbase_row(BASE + 3 * HOUR, 103.0)]
    transport = FakeTransport(rows)
    cfg = EndpointConfig(base_url="https://x", product_id="BTC-USD")
    s = fetch_remote_candles("BTC-USD", BASE, BASE + 4 * HOUR, cfg, transport=transport, sleep=lambda _: None)
    assert len(s) == 4
    assert s.closes[1] == s.closes[2] == 100.0
    assert s.volumes[1] == 0.0


def test_fetch_retries_then_succeeds():
    rows = [coinbase_row(BASE, 100.0)]
    transport = FakeTransport(rows, failures=[OSError("boom"), OSError("boom")])
    cfg = EndpointConfig(base_url="https://x", product_id="BTC-USD", max_retries=3)
    naps = []
    s = fetch_remote_candles("BTC-USD", BASE, BASE + HOUR, cfg, transport=transport, sleep=naps.append)
    assert len(s) == 1
    assert naps == [1.0, 2.0]  # linear backoff


def test_fetch_honours_rate_limit_pause():
    rows = [coinbase_row(BASE, 100.0)]
    transport = FakeTransport(rows, failures=[RateLimited(retry_after=7.5)])
    cfg = EndpointConfig(base_url="https://x", product_id="BTC-USD")
    naps = []
    fetch_remote_candles("BTC-USD", BASE, BASE + HOUR, cfg, transport=transport, sleep=naps.append)
    assert naps == [7.5]


def test_fetch_gives_up_after_retry_budget():
    transport = FakeTransport([], failures=[OSError("boom")] * 4)
    cfg = EndpointConfig(base_url="https://x", product_id="BTC-USD", max_retries=3)
    with pytest.raises(FetchError, match="after 4 attempts"):
        fetch_remote_candles("BTC-USD", BASE, BASE + HOUR, cfg, transport=transport, sleep=lambda _: None)


def test_fetch_deduplicates_page_overlap():
    rows = [coinbase_row(BASE + i * HOUR, 100.0 + i) for i in range(3)]
    transport = FakeTransport(rows)

    def overlapping(url, timeout):
        # every page re-serves the full row set; dedupe must collapse them
        transport.urls.append(url)
        import json as _json
        return _json.dumps(rows).encode()

    cfg = EndpointConfig(base_url="https://x", product_id="BTC-USD", page_size=2)
    s = fetch_remote_candles("BTC-USD", BASE, BASE + 3 * HOUR, cfg, transport=overlapping, sleep=lambda _: None)
    assert len(s) == 3
