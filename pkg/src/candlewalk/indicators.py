"""Momentum indicators over hourly bars and feature-matrix assembly.

All indicator functions return full-length float arrays aligned to the input,
with NaN marking warm-up positions where the value is undefined. Windows are
in bars. The feature matrix drops leading rows until every selected column is
defined; undefined values after that point are an error.
"""

from __future__ import annotations

import io
import re
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, FeatureError, InsufficientHistoryError
from .market_data import CandleSeries, compute_response
from .timeutil import format_iso


@dataclass(frozen=True)
class IndicatorConfig:
    """Window lengths for the standard indicator set (bars, not days)."""

    bollinger_window: int = 20
    macd_fast: int = 12
    macd_slow: int = 26
    macd_signal: int = 26
    rsi_window: int = 14
    ema_seed: str = "first"

    def __post_init__(self):
        for name in ("bollinger_window", "macd_fast", "macd_slow", "macd_signal", "rsi_window"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.macd_fast >= self.macd_slow:
            raise ConfigError("macd_fast must be < macd_slow")
        if self.ema_seed != "first":
            raise ConfigError(f"unknown ema_seed rule {self.ema_seed!r}")


def sma(prices: np.ndarray, n: int) -> np.ndarray:
    """Trailing n-bar mean; positions 0..n-2 are NaN."""
    prices = np.asarray(prices, dtype=np.float64)
    if n < 1:
        raise ValueError("window must be >= 1")
    if len(prices) < n:
        raise InsufficientHistoryError(f"need {n} bars for sma({n}), have {len(prices)}")
    out = np.full(len(prices), np.nan)
    out[n - 1:] = sliding_window_view(prices, n).mean(axis=1)
    return out


def rolling_std(values: np.ndarray, n: int) -> np.ndarray:
    """Trailing n-bar population standard deviation; NaN warm-up prefix."""
    values = np.asarray(values, dtype=np.float64)
    if len(values) < n:
        raise InsufficientHistoryError(f"need {n} bars, have {len(values)}")
    windows = sliding_window_view(values, n)
    means = windows.mean(axis=1)
    out = np.full(len(values), np.nan)
    out[n - 1:] = np.sqrt(((windows - means[:, None]) ** 2).mean(axis=1))
    return out


def ema(prices: np.ndarray, m: int) -> np.ndarray:
    """Exponential moving average, alpha = 2/(m+1), seeded at the first value."""
    prices = np.asarray(prices, dtype=np.float64)
    if len(prices) == 0:
        raise InsufficientHistoryError("ema of empty series")
    if m < 1:
        raise ValueError("window must be >= 1")
    alpha = 2.0 / (m + 1)
    out = np.empty(len(prices))
    out[0] = prices[0]
    for t in range(1, len(prices)):
        out[t] = alpha * prices[t] + (1.0 - alpha) * out[t - 1]
    return out


def bollinger(prices: np.ndarray, n: int = 20) -> tuple[np.ndarray, np.ndarray]:
    """Percent-b and bandwidth against bands at mean +/- 2 population sigma.

    Zero-variance windows give percent_b = 0.5 and bandwidth = 0.
    """
    if n < 2:
        raise ValueError("bollinger window must be >= 2")
    mid = sma(prices, n)
    sigma = rolling_std(prices, n)
    upper = mid + 2.0 * sigma
    lower = mid - 2.0 * sigma
    width = upper - lower
    with np.errstate(invalid="ignore", divide="ignore"):
        percent_b = np.where(width > 0, (np.asarray(prices, dtype=np.float64) - lower) / width, 0.5)
        bandwidth = np.where(width > 0, width / mid, 0.0)
    undefined = np.isnan(mid)
    percent_b[undefined] = np.nan
    bandwidth[undefined] = np.nan
    return percent_b, bandwidth


def macd(prices: np.ndarray, m: int = 12, n: int = 26, l: int = 26) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """MACD line EMA(m)-EMA(n), signal EMA(l) of the line, and their difference."""
    if m >= n:
        raise ValueError("macd fast window must be < slow window")
    line = ema(prices, m) - ema(prices, n)
    signal = ema(line, l)
    return line, signal, line - signal


def rsi(prices: np.ndarray, n: int = 14) -> tuple[np.ndarray, np.ndarray]:
    """First (window-average) and smoothed (recursive) RSI over n-bar return windows.

    Returns R_t = (P_t - P_{t-1})/P_{t-1}; the window at bar t covers the n
    returns ending at R_t, so both variants are first defined at index n.
    AL = 0 saturates to 100, AG = 0 to 0; a window with neither gains nor
    losses reads 50.
    """
    prices = np.asarray(prices, dtype=np.float64)
    if n < 1:
        raise ValueError("window must be >= 1")
    if len(prices) < n + 1:
        raise InsufficientHistoryError(f"need {n + 1} bars for rsi({n}), have {len(prices)}")
    returns = np.diff(prices) / prices[:-1]
    gains = np.maximum(returns, 0.0)
    losses = np.maximum(-returns, 0.0)

    avg_gain = sliding_window_view(gains, n).mean(axis=1)
    avg_loss = sliding_window_view(losses, n).mean(axis=1)

    first = np.full(len(prices), np.nan)
    first[n:] = _rsi_from_averages(avg_gain, avg_loss)

    smoothed = np.full(len(prices), np.nan)
    sag = np.empty(len(avg_gain))
    sal = np.empty(len(avg_loss))
    sag[0], sal[0] = avg_gain[0], avg_loss[0]
    for i in range(1, len(sag)):
        sag[i] = (sag[i - 1] * (n - 1) + gains[n - 1 + i]) / n
        sal[i] = (sal[i - 1] * (n - 1) + losses[n - 1 + i]) / n
    smoothed[n:] = _rsi_from_averages(sag, sal)
    return first, smoothed


def _rsi_from_averages(avg_gain: np.ndarray, avg_loss: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore", divide="ignore"):
        rs = avg_gain / avg_loss
        values = 100.0 - 100.0 / (1.0 + rs)
    values = np.where(avg_loss == 0, 100.0, values)
    values = np.where(avg_gain == 0, 0.0, values)
    values = np.where((avg_gain == 0) & (avg_loss == 0), 50.0, values)
    return values


def volume_zscore(volumes: np.ndarray, n: int = 20) -> np.ndarray:
    """(V_t - trailing mean)/trailing population sigma; zero-variance windows give 0."""
    volumes = np.asarray(volumes, dtype=np.float64)
    mean = sma(volumes, n)
    sigma = rolling_std(volumes, n)
    with np.errstate(invalid="ignore", divide="ignore"):
        z = np.where(sigma > 0, (volumes - mean) / sigma, 0.0)
    z[np.isnan(mean)] = np.nan
    return z


DEFAULT_FEATURE_SET = (
    "percent_b",
    "bandwidth",
    "macd_line",
    "macd_signal",
    "macd_histogram",
    "rsi_first",
    "rsi_smoothed",
    "lag_response(1)",
    "lag_response(2)",
    "lag_response(3)",
    "lag_response(6)",
    "lag_response(12)",
    "lag_response(24)",
    "volume_zscore",
)

_TOKEN = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)(?:\(([0-9,\s]*)\))?$")


def parse_feature_token(token: str) -> tuple[str, tuple[int, ...] | None]:
    """Split 'name' or 'name(a,b)' into (name, args); bare names return args None."""
    match = _TOKEN.match(token.strip())
    if not match:
        raise ConfigError(f"bad feature token {token!r}")
    name, arglist = match.groups()
    if arglist is None:
        return name, None
    args = tuple(int(a) for a in arglist.split(",") if a.strip())
    return name, args


@dataclass(frozen=True)
class FeatureMatrix:
    timestamps: np.ndarray
    feature_names: tuple[str, ...]
    rows: np.ndarray
    warmup_dropped: int

    def __post_init__(self):
        if self.rows.shape != (len(self.timestamps), len(self.feature_names)):
            raise ValueError("row block does not match timestamps x names")

    def __len__(self) -> int:
        return len(self.timestamps)

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, self.feature_names.index(name)]


def build_feature_matrix(
    series: CandleSeries,
    config: IndicatorConfig = IndicatorConfig(),
    selection: tuple[str, ...] = DEFAULT_FEATURE_SET,
    response_mode: str = "paper",
) -> FeatureMatrix:
    """Assemble the per-bar feature matrix for a candle series.

    Selection tokens are indicator names, optionally with explicit windows
    ('sma(20)'); bare names take windows from config. Unknown names are looked
    up in the series extra columns. Leading bars where any column is undefined
    are dropped and counted; an undefined value after that names its column.
    """
    if not selection:
        raise ConfigError("empty feature selection")
    if len(set(selection)) != len(selection):
        raise ConfigError("duplicate feature names in selection")

    closes = series.closes
    columns: list[np.ndarray] = []
    macd_cache: dict[tuple[int, int, int], tuple] = {}
    rsi_cache: dict[int, tuple] = {}
    boll_cache: dict[int, tuple] = {}
    responses = None

    def lagged_response(k: int) -> np.ndarray:
        nonlocal responses
        if responses is None:
            responses = compute_response(series, response_mode)
        if k < 1:
            raise ConfigError("lag_response lag must be >= 1")
        out = np.full(len(series), np.nan)
        # response stamped at bar i sits at values[i-1]; lag k at bar t reads bar t-k+1
        out[k:] = responses.values[: len(series) - k]
        return out

    for token in selection:
        name, args = parse_feature_token(token)
        if name == "sma":
            columns.append(sma(closes, *(args or (config.bollinger_window,))))
        elif name == "ema":
            columns.append(ema(closes, *(args or (config.macd_fast,))))
        elif name in ("percent_b", "bandwidth"):
            window = args[0] if args else config.bollinger_window
            if window not in boll_cache:
                boll_cache[window] = bollinger(closes, window)
            columns.append(boll_cache[window][0 if name == "percent_b" else 1])
        elif name in ("macd_line", "macd_signal", "macd_histogram"):
            key = tuple(args) if args else (config.macd_fast, config.macd_slow, config.macd_signal)
            if len(key) != 3:
                raise ConfigError(f"{name} takes 3 windows, got {args}")
            if key not in macd_cache:
                macd_cache[key] = macd(closes, *key)
            idx = ("macd_line", "macd_signal", "macd_histogram").index(name)
            columns.append(macd_cache[key][idx])
        elif name in ("rsi_first", "rsi_smoothed"):
            window = args[0] if args else config.rsi_window
            if window not in rsi_cache:
                rsi_cache[window] = rsi(closes, window)
            columns.append(rsi_cache[window][0 if name == "rsi_first" else 1])
        elif name == "lag_response":
            if not args or len(args) != 1:
                raise ConfigError("lag_response takes exactly one lag")
            columns.append(lagged_response(args[0]))
        elif name == "volume_zscore":
            window = args[0] if args else config.bollinger_window
            columns.append(volume_zscore(series.volumes, window))
        elif name in series.extra_columns:
            columns.append(series.extra_columns[name].astype(np.float64))
        else:
            raise ConfigError(f"unknown feature {token!r}")

    block = np.column_stack(columns)
    defined = np.all(np.isfinite(block), axis=1)
    if not defined.any():
        raise InsufficientHistoryError(
            f"series of {len(series)} bars is shorter than the longest feature warmup"
        )
    warmup = int(np.argmax(defined))
    tail = block[warmup:]
    bad = ~np.isfinite(tail)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise FeatureError(
            f"feature {selection[c]!r} undefined at "
            f"{format_iso(int(series.timestamps[warmup + r]))} after warmup"
        )
    return FeatureMatrix(
        timestamps=series.timestamps[warmup:].copy(),
        feature_names=tuple(selection),
        rows=tail.copy(),
        warmup_dropped=warmup,
    )


def export_feature_matrix(matrix: FeatureMatrix) -> str:
    """CSV with ISO timestamps then one column per feature, repr-exact floats."""
    out = io.StringIO()
    out.write("timestamp," + ",".join(matrix.feature_names) + "\n")
    for i in range(len(matrix)):
        values = ",".join(repr(float(x)) for x in matrix.rows[i])
        out.write(f"{format_iso(int(matrix.timestamps[i]))},{values}\n")
    return out.getvalue()
