"""Seeded synthetic candle generators for demos, tests, and acceptance runs.

Two generators: a plain geometric-walk OHLCV series, and a planted-signal
series whose extra columns encode the next hour's class up to a chosen noise
rate. The planted generator works backwards from target responses: it draws
per-bar responses r_t by regime (up / flat / down blocks), then integrates
prices so that the log-ratio response formula reproduces those r_t exactly.
A small log-space correction spread across flat bars pins the whole-run
buy-and-hold factor, keeping every flat bar strictly inside the class band.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .labeling import DEFAULT_THRESHOLD, assign_classes
from .market_data import CandleSeries
from .timeutil import HOUR

DEFAULT_START = 1483228800  # 2017-01-01 00:00:00 UTC


def _ohlc_from_closes(closes: np.ndarray, rng: np.random.Generator, symbol: str,
                      start: int, extra: dict | None = None) -> CandleSeries:
    n = len(closes)
    opens = np.concatenate([[closes[0]], closes[:-1]])
    span = 1.0 + 0.002 * rng.random(n)
    highs = np.maximum(opens, closes) * span
    lows = np.minimum(opens, closes) / span
    volumes = np.exp(rng.normal(3.0, 0.5, size=n))
    return CandleSeries(
        symbol,
        start + HOUR * np.arange(n, dtype=np.int64),
        opens, highs, lows, closes, volumes,
        extra_columns=extra,
    )


def generate_random_walk(
    n_bars: int,
    seed: int,
    start: int = DEFAULT_START,
    start_price: float = 8000.0,
    hourly_vol: float = 0.01,
    drift: float = 0.0,
    symbol: str = "SYN-USD",
) -> CandleSeries:
    """Geometric random walk with consistent OHLC and lognormal volume."""
    rng = np.random.default_rng(seed)
    steps = rng.normal(drift, hourly_vol, size=n_bars - 1)
    closes = start_price * np.exp(np.concatenate([[0.0], np.cumsum(steps)]))
    return _ohlc_from_closes(closes, rng, symbol, start)


@dataclass(frozen=True)
class PlantedData:
    """A candle series whose signal_up/signal_down columns foretell the next bar."""

    series: CandleSeries
    true_labels: np.ndarray  # class of the response over (t, t+1], length n-1
    noise_mask: np.ndarray  # bars whose signal columns lie, length n-1
    responses: np.ndarray  # the planted r values, length n-1
    market_factor: float  # buy-and-hold close[-1]/close[0]


def generate_planted_series(
    n_bars: int,
    seed: int,
    start: int = DEFAULT_START,
    start_price: float = 8000.0,
    threshold: float = DEFAULT_THRESHOLD,
    noise_rate: float = 0.10,
    market_target: float = 0.90,
    regime_bars: tuple[int, int] = (24, 96),
    symbol: str = "SYN-USD",
) -> PlantedData:
    """Regime-blocked responses with one-hot next-class signal columns.

    Up blocks draw r in [1.2, 3]*threshold, down blocks the negation, flat
    blocks stay within 0.5*threshold. Cycling up/flat/down/flat guarantees
    every month holds all three classes. market_target fixes close[-1] ~=
    market_target * close[0], so the walk itself loses money while the
    planted up-moves remain there for a strategy to harvest.
    """
    if n_bars < 10:
        raise ValueError("need at least 10 bars")
    rng = np.random.default_rng(seed)
    n_resp = n_bars - 1

    responses = np.empty(n_resp)
    kinds = np.empty(n_resp, dtype=np.int8)
    pos = 0
    cycle = 0
    last_up: np.ndarray = threshold * rng.uniform(1.2, 3.0, size=regime_bars[0])
    while pos < n_resp:
        kind = ("up", "flat", "down", "flat")[cycle % 4]
        if kind == "up":
            length = int(rng.integers(regime_bars[0], regime_bars[1] + 1))
            last_up = threshold * rng.uniform(1.2, 3.0, size=length)
            block = last_up
            code = 0
        elif kind == "down":
            # mirror the preceding up block in log space (jittered) so the
            # log price oscillates in a band instead of wandering freely;
            # per-bar moves then stay large relative to trading fees
            eta = rng.uniform(0.9, 1.1, size=len(last_up))
            block = np.expm1(-np.log1p(last_up) * eta)
            code = 1
        else:
            length = int(rng.integers(regime_bars[0], regime_bars[1] + 1))
            block = threshold * rng.uniform(-0.5, 0.5, size=length)
            code = 2
        block = block[: n_resp - pos]
        responses[pos : pos + len(block)] = block
        kinds[pos : pos + len(block)] = code
        pos += len(block)
        cycle += 1

    # Prices integrate as ln P_{t+1} = ln P_t * (1 + r_t), so the buy-and-hold
    # factor is exp(ln P_0 * (prod(1+r) - 1)). Spread the gap to the target
    # over the flat bars in log space; the shift is tiny relative to the band.
    log_p0 = math.log(start_price)
    target_product = 1.0 + math.log(market_target) / log_p0
    flat = kinds == 2
    n_flat = int(flat.sum())
    if n_flat == 0:
        raise ValueError("no flat bars; widen regime_bars")
    gap = math.log(target_product) - float(np.sum(np.log1p(responses)))
    responses[flat] = np.expm1(np.log1p(responses[flat]) + gap / n_flat)
    if np.any(np.abs(responses[flat]) >= 0.9 * threshold):
        raise ValueError("drift correction pushed a flat bar out of its band")

    log_prices = log_p0 * np.concatenate([[1.0], np.cumprod(1.0 + responses)])
    closes = np.exp(log_prices)
    true_labels = assign_classes(responses, threshold)
    assert np.array_equal(true_labels, kinds), "planted classes drifted"

    signal_up = np.zeros(n_bars)
    signal_down = np.zeros(n_bars)
    signal_up[:n_resp][true_labels == 0] = 1.0
    signal_down[:n_resp][true_labels == 1] = 1.0

    noise_mask = rng.random(n_resp) < noise_rate
    patterns = ((1.0, 0.0), (0.0, 1.0), (0.0, 0.0))
    for t in np.nonzero(noise_mask)[0]:
        wrong = [p for k, p in enumerate(patterns) if k != true_labels[t]]
        signal_up[t], signal_down[t] = wrong[int(rng.integers(0, 2))]

    series = _ohlc_from_closes(
        closes, rng, symbol, start,
        extra={"signal_up": signal_up, "signal_down": signal_down},
    )
    return PlantedData(
        series=series,
        true_labels=true_labels,
        noise_mask=noise_mask,
        responses=responses,
        market_factor=float(closes[-1] / closes[0]),
    )
