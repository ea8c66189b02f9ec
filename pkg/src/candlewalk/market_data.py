"""Hourly OHLCV ingestion, validation, gap repair, and response computation.

Candle files are CSV with header ``timestamp,open,high,low,close,volume``
plus optional extra numeric columns (on-chain metrics and the like).
Timestamps are integer Unix seconds or ISO-8601 UTC, detected once per file.
Internally all timestamps are integer epoch seconds.
"""

from __future__ import annotations

import io
import json
import logging
import math
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field

import numpy as np

from .errors import AlignmentError, CandleDataError, FetchError, GapError, ResponseDomainError
from .timeutil import HOUR, format_iso, parse_timestamp

log = logging.getLogger(__name__)

CORE_COLUMNS = ("timestamp", "open", "high", "low", "close", "volume")

RESPONSE_MODES = ("paper", "plain_log")


@dataclass(frozen=True)
class Candle:
    """One OHLCV bar. Prices in quote currency, volume in base units."""

    timestamp: int
    open: float
    high: float
    low: float
    close: float
    volume: float

    def validate(self) -> None:
        if min(self.open, self.high, self.low, self.close) <= 0:
            raise CandleDataError(f"non-positive price in candle at {format_iso(self.timestamp)}")
        if self.volume < 0:
            raise CandleDataError(f"negative volume in candle at {format_iso(self.timestamp)}")
        if self.low > min(self.open, self.close) or self.high < max(self.open, self.close) or self.low > self.high:
            raise CandleDataError(
                f"candle at {format_iso(self.timestamp)} violates OHLC ordering: "
                f"o={self.open} h={self.high} l={self.low} c={self.close}"
            )


class CandleSeries:
    """Immutable, timestamp-sorted hourly candle series with optional extra columns.

    Extra columns are aligned numeric series; missing values are NaN.
    Strict hourly spacing is established by validate_and_repair, not here.
    """

    def __init__(
        self,
        symbol: str,
        timestamps: np.ndarray,
        opens: np.ndarray,
        highs: np.ndarray,
        lows: np.ndarray,
        closes: np.ndarray,
        volumes: np.ndarray,
        extra_columns: dict[str, np.ndarray] | None = None,
        interval: int = HOUR,
    ):
        self.symbol = symbol
        self.interval = int(interval)
        self.timestamps = np.asarray(timestamps, dtype=np.int64)
        self.opens = np.asarray(opens, dtype=np.float64)
        self.highs = np.asarray(highs, dtype=np.float64)
        self.lows = np.asarray(lows, dtype=np.float64)
        self.closes = np.asarray(closes, dtype=np.float64)
        self.volumes = np.asarray(volumes, dtype=np.float64)
        self.extra_columns = {k: np.asarray(v, dtype=np.float64) for k, v in (extra_columns or {}).items()}

        n = len(self.timestamps)
        for name, arr in (("open", self.opens), ("high", self.highs), ("low", self.lows),
                          ("close", self.closes), ("volume", self.volumes)):
            if len(arr) != n:
                raise CandleDataError(f"column {name!r} has {len(arr)} values for {n} candles")
        for name, arr in self.extra_columns.items():
            if len(arr) != n:
                raise CandleDataError(f"extra column {name!r} has {len(arr)} values for {n} candles")
        diffs = np.diff(self.timestamps)
        if np.any(diffs == 0):
            dup = int(self.timestamps[np.nonzero(diffs == 0)[0][0]])
            raise CandleDataError(f"duplicate timestamp {format_iso(dup)}")
        if np.any(diffs < 0):
            raise CandleDataError("timestamps not sorted ascending")
        for arr in (self.timestamps, self.opens, self.highs, self.lows, self.closes, self.volumes,
                    *self.extra_columns.values()):
            arr.setflags(write=False)

    @classmethod
    def from_candles(
        cls,
        symbol: str,
        candles: list[Candle],
        extra_columns: dict[str, np.ndarray] | None = None,
        interval: int = HOUR,
    ) -> "CandleSeries":
        return cls(
            symbol,
            np.array([c.timestamp for c in candles], dtype=np.int64),
            np.array([c.open for c in candles]),
            np.array([c.high for c in candles]),
            np.array([c.low for c in candles]),
            np.array([c.close for c in candles]),
            np.array([c.volume for c in candles]),
            extra_columns,
            interval,
        )

    def __len__(self) -> int:
        return len(self.timestamps)

    def candle(self, i: int) -> Candle:
        return Candle(
            int(self.timestamps[i]), float(self.opens[i]), float(self.highs[i]),
            float(self.lows[i]), float(self.closes[i]), float(self.volumes[i]),
        )

    def __iter__(self):
        return (self.candle(i) for i in range(len(self)))

    def index_of(self, ts: int) -> int:
        i = int(np.searchsorted(self.timestamps, ts))
        if i >= len(self) or self.timestamps[i] != ts:
            raise AlignmentError(f"no candle at {format_iso(ts)} in {self.symbol}")
        return i

    def slice(self, start: int, stop: int) -> "CandleSeries":
        """Sub-series over index range [start, stop)."""
        return CandleSeries(
            self.symbol,
            self.timestamps[start:stop], self.opens[start:stop], self.highs[start:stop],
            self.lows[start:stop], self.closes[start:stop], self.volumes[start:stop],
            {k: v[start:stop] for k, v in self.extra_columns.items()},
            self.interval,
        )


@dataclass(frozen=True)
class ReturnSeries:
    """Response values, each stamped with the bar at which it is known (the later bar)."""

    timestamps: np.ndarray
    values: np.ndarray
    mode: str = "paper"

    def __len__(self) -> int:
        return len(self.timestamps)

    def value_at(self, ts: int) -> float:
        i = int(np.searchsorted(self.timestamps, ts))
        if i >= len(self.timestamps) or self.timestamps[i] != ts:
            raise AlignmentError(f"no response at {format_iso(ts)}")
        return float(self.values[i])


@dataclass(frozen=True)
class CandleFormat:
    """Describes one candle CSV file: symbol plus timestamp style.

    timestamp_style "auto" sniffs the first data row (unix integer vs ISO)
    and applies that choice to the whole file.
    """

    symbol: str = "UNSPECIFIED"
    timestamp_style: str = "auto"  # auto | unix | iso


@dataclass(frozen=True)
class GapPolicy:
    """How validate_and_repair treats missing hours.

    forward_fill inserts synthetic candles (O=H=L=C=previous close, volume 0)
    for runs of up to max_gap_hours missing bars; longer runs are an error.
    mode "reject" errors on any gap.
    """

    mode: str = "forward_fill"  # forward_fill | reject
    max_gap_hours: int = 6


@dataclass(frozen=True)
class RepairAction:
    timestamp: int
    action: str


def parse_candles(source, fmt: CandleFormat = CandleFormat()) -> CandleSeries:
    """Parse a candle CSV (bytes, str, or file object) into a sorted CandleSeries.

    Rows may arrive in any order; duplicates on the same timestamp are rejected.
    """
    text = _as_text(source)
    lines = text.splitlines()
    if not lines:
        raise CandleDataError("empty candle file")
    header = [h.strip() for h in lines[0].split(",")]
    if tuple(header[:6]) != CORE_COLUMNS:
        raise CandleDataError(f"bad header: expected {','.join(CORE_COLUMNS)}[,...], got {lines[0]!r}")
    extra_names = header[6:]
    if len(set(extra_names)) != len(extra_names):
        raise CandleDataError("duplicate extra column names in header")

    style = fmt.timestamp_style
    rows: list[tuple] = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != len(header):
            raise CandleDataError(f"line {lineno}: expected {len(header)} fields, got {len(parts)}")
        if style == "auto":
            style = "unix" if parts[0].strip().lstrip("-").isdigit() else "iso"
        try:
            ts = int(parts[0]) if style == "unix" else parse_timestamp(parts[0])
        except ValueError as exc:
            raise CandleDataError(f"line {lineno}: bad timestamp {parts[0]!r}: {exc}") from None
        try:
            o, h, l, c, v = (float(parts[i]) for i in range(1, 6))
        except ValueError:
            raise CandleDataError(f"line {lineno}: malformed numeric field") from None
        if min(o, h, l, c) <= 0 or not all(map(math.isfinite, (o, h, l, c))):
            raise CandleDataError(f"line {lineno}: non-positive price")
        if v < 0 or not math.isfinite(v):
            raise CandleDataError(f"line {lineno}: negative volume")
        extras = []
        for j, raw in enumerate(parts[6:]):
            raw = raw.strip()
            if raw == "":
                extras.append(math.nan)
            else:
                try:
                    extras.append(float(raw))
                except ValueError:
                    raise CandleDataError(
                        f"line {lineno}: malformed value in column {extra_names[j]!r}"
                    ) from None
        rows.append((ts, o, h, l, c, v, extras))

    rows.sort(key=lambda r: r[0])
    for a, b in zip(rows, rows[1:]):
        if a[0] == b[0]:
            raise CandleDataError(f"duplicate timestamp {format_iso(a[0])}")

    extra_columns = {
        name: np.array([r[6][j] for r in rows]) for j, name in enumerate(extra_names)
    }
    return CandleSeries(
        fmt.symbol,
        np.array([r[0] for r in rows], dtype=np.int64),
        np.array([r[1] for r in rows]),
        np.array([r[2] for r in rows]),
        np.array([r[3] for r in rows]),
        np.array([r[4] for r in rows]),
        np.array([r[5] for r in rows]),
        extra_columns,
    )


def _as_text(source) -> str:
    if isinstance(source, bytes):
        return source.decode("utf-8")
    if isinstance(source, str):
        return source
    data = source.read()
    return data.decode("utf-8") if isinstance(data, bytes) else data


def serialize_candles(series: CandleSeries, stream=None) -> str:
    """Canonical CSV: unix-second timestamps, repr-round-trip floats, NaN as empty."""
    header = list(CORE_COLUMNS) + list(series.extra_columns)
    out = io.StringIO()
    out.write(",".join(header) + "\n")
    extras = list(series.extra_columns.values())
    for i in range(len(series)):
        fields = [
            str(int(series.timestamps[i])),
            repr(float(series.opens[i])),
            repr(float(series.highs[i])),
            repr(float(series.lows[i])),
            repr(float(series.closes[i])),
            repr(float(series.volumes[i])),
        ]
        for col in extras:
            x = float(col[i])
            fields.append("" if math.isnan(x) else repr(x))
        out.write(",".join(fields) + "\n")
    text = out.getvalue()
    if stream is not None:
        stream.write(text)
    return text


def validate_and_repair(series: CandleSeries, policy: GapPolicy = GapPolicy()) -> tuple[CandleSeries, list[RepairAction]]:
    """Enforce strict hourly spacing, filling gaps per policy.

    Returns the repaired series plus one RepairAction per inserted bar.
    Every candle is fully validated (positivity, OHLC ordering, alignment).
    """
    if len(series) == 0:
        return series, []
    for i in range(len(series)):
        series.candle(i).validate()
    if np.any(series.timestamps % series.interval != 0):
        bad = int(series.timestamps[np.nonzero(series.timestamps % series.interval)[0][0]])
        raise CandleDataError(f"timestamp {format_iso(bad)} not aligned to {series.interval}s bars")

    diffs = np.diff(series.timestamps)
    if np.all(diffs == series.interval):
        return series, []

    report: list[RepairAction] = []
    ts_out: list[int] = []
    cols_out: dict[str, list[float]] = {k: [] for k in ("open", "high", "low", "close", "volume")}
    extras_out: dict[str, list[float]] = {k: [] for k in series.extra_columns}

    def _emit(i: int) -> None:
        ts_out.append(int(series.timestamps[i]))
        cols_out["open"].append(float(series.opens[i]))
        cols_out["high"].append(float(series.highs[i]))
        cols_out["low"].append(float(series.lows[i]))
        cols_out["close"].append(float(series.closes[i]))
        cols_out["volume"].append(float(series.volumes[i]))
        for k, col in series.extra_columns.items():
            extras_out[k].append(float(col[i]))

    _emit(0)
    for i in range(1, len(series)):
        gap = int(series.timestamps[i] - series.timestamps[i - 1])
        missing = gap // series.interval - 1
        if missing > 0:
            if policy.mode == "reject":
                raise GapError(f"gap of {missing} bars before {format_iso(int(series.timestamps[i]))}")
            if missing > policy.max_gap_hours:
                raise GapError(
                    f"gap of {missing} bars before {format_iso(int(series.timestamps[i]))} "
                    f"exceeds the tolerated {policy.max_gap_hours}"
                )
            fill_close = cols_out["close"][-1]
            for k in range(1, missing + 1):
                t = int(series.timestamps[i - 1]) + k * series.interval
                ts_out.append(t)
                for key in ("open", "high", "low", "close"):
                    cols_out[key].append(fill_close)
                cols_out["volume"].append(0.0)
                for key in extras_out:
                    extras_out[key].append(math.nan)
                report.append(RepairAction(t, "forward_fill"))
        _emit(i)

    repaired = CandleSeries(
        series.symbol,
        np.array(ts_out, dtype=np.int64),
        np.array(cols_out["open"]),
        np.array(cols_out["high"]),
        np.array(cols_out["low"]),
        np.array(cols_out["close"]),
        np.array(cols_out["volume"]),
        {k: np.array(v) for k, v in extras_out.items()},
        series.interval,
    )
    return repaired, report


def repair_report_json(report: list[RepairAction]) -> str:
    return json.dumps([{"timestamp": r.timestamp, "action": r.action} for r in report], indent=2) + "\n"


def compute_response(series: CandleSeries, mode: str = "paper") -> ReturnSeries:
    """Per-bar response from consecutive close prices.

    mode "paper": (ln C[t+1] - ln C[t]) / ln C[t]; requires every close > 1 so
    the denominator stays positive. mode "plain_log": ln C[t+1] - ln C[t].
    Value i is stamped with the later bar's timestamp (when it becomes known).
    """
    if mode not in RESPONSE_MODES:
        raise ValueError(f"unknown response mode {mode!r}")
    if len(series) < 2:
        raise CandleDataError("need at least 2 candles to compute responses")
    closes = series.closes
    if mode == "paper" and np.any(closes <= 1.0):
        i = int(np.nonzero(closes <= 1.0)[0][0])
        raise ResponseDomainError(
            f"close price {closes[i]} <= 1 at {format_iso(int(series.timestamps[i]))}: "
            "the log-ratio response is undefined; use response mode 'plain_log'"
        )
    logs = np.log(closes)
    if mode == "paper":
        values = np.diff(logs) / logs[:-1]
    else:
        values = np.diff(logs)
    return ReturnSeries(series.timestamps[1:].copy(), values, mode)


@dataclass(frozen=True)
class EndpointConfig:
    """Candle history endpoint: Coinbase-exchange-style JSON pages.

    GET {base_url}/products/{product_id}/candles?start=ISO&end=ISO&granularity=3600
    returning [[epoch_s, low, high, open, close, volume], ...].
    """

    base_url: str
    product_id: str
    page_size: int = 300
    max_retries: int = 3
    backoff_seconds: float = 1.0
    timeout: float = 10.0


def _default_transport(url: str, timeout: float) -> bytes:
    req = urllib.request.Request(url, headers={"User-Agent": "candlewalk/0.1"})
    with urllib.request.urlopen(req, timeout=timeout) as resp:
        return resp.read()


class RateLimited(Exception):
    """Raised by transports to signal a server-reported rate limit."""

    def __init__(self, retry_after: float = 1.0):
        super().__init__(f"rate limited, retry after {retry_after}s")
        self.retry_after = retry_after


def fetch_remote_candles(
    symbol: str,
    start: int,
    end: int,
    config: EndpointConfig,
    transport=None,
    policy: GapPolicy = GapPolicy(),
    sleep=time.sleep,
) -> CandleSeries:
    """Page through [start, end) hourly candles and normalize via parse + repair.

    transport(url, timeout) -> bytes may be injected for testing; retries with
    linear backoff on transport errors and pauses on RateLimited.
    """
    if start % HOUR or end % HOUR:
        raise ValueError("fetch range must be hour-aligned")
    if end <= start:
        return CandleSeries(symbol, np.array([], dtype=np.int64), *(np.array([]) for _ in range(5)))
    transport = transport or _default_transport

    rows: list[tuple[int, float, float, float, float, float]] = []
    page_start = start
    while page_start < end:
        page_end = min(page_start + config.page_size * HOUR, end)
        url = (
            f"{config.base_url}/products/{config.product_id}/candles"
            f"?start={format_iso(page_start)}&end={format_iso(page_end - HOUR)}&granularity={HOUR}"
        )
        payload = _fetch_with_retries(transport, url, config, sleep)
        for entry in json.loads(payload):
            t, low, high, open_, close, volume = entry
            rows.append((int(t), float(open_), float(high), float(low), float(close), float(volume)))
        page_start = page_end

    rows = [r for r in rows if start <= r[0] < end]
    rows.sort(key=lambda r: r[0])
    deduped = [r for i, r in enumerate(rows) if i == 0 or r[0] != rows[i - 1][0]]
    series = CandleSeries(
        symbol,
        np.array([r[0] for r in deduped], dtype=np.int64),
        *(np.array([r[j] for r in deduped]) for j in range(1, 6)),
    )
    repaired, report = validate_and_repair(series, policy)
    if report:
        log.info("fetch %s: forward-filled %d missing bars", symbol, len(report))
    return repaired


def _fetch_with_retries(transport, url: str, config: EndpointConfig, sleep) -> bytes:
    last_error: Exception | None = None
    for attempt in range(config.max_retries + 1):
        try:
            return transport(url, config.timeout)
        except RateLimited as rl:
            sleep(rl.retry_after)
            last_error = rl
        except (urllib.error.URLError, OSError, ConnectionError) as exc:
            last_error = exc
            if attempt < config.max_retries:
                sleep(config.backoff_seconds * (attempt + 1))
    raise FetchError(f"failed to fetch {url} after {config.max_retries + 1} attempts: {last_error}")
