"""Classification and time-series diagnostics for prediction streams.

PPV counts how often an actionable buy call was right, NPV the same for sell
calls; bars predicting "no move" join neither ratio. Undefined ratios (empty
denominators) stay None rather than collapsing to zero. Variance is population
(1/n) throughout, matching the indicator stack.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .backtest import BacktestResult
from .errors import AlignmentError, InsufficientHistoryError
from .indicators import rolling_std
from .labeling import C1, C2
from .timeutil import format_iso, period_boundaries, shift_months
from .walkforward import PredictionStream

DEFAULT_GAMMA_GRID = tuple(round(0.1 * k, 1) for k in range(11))

WEEK = 7 * 86400


@dataclass(frozen=True)
class ConfusionSummary:
    gamma: float
    n_predicted_positive: int  # actionable c1 bars
    n_true_positive: int
    n_predicted_negative: int  # actionable c2 bars
    n_true_negative: int
    ppv: float | None
    npv: float | None

    def __post_init__(self):
        if not 0 <= self.n_true_positive <= self.n_predicted_positive:
            raise ValueError("true positives exceed predicted positives")
        if not 0 <= self.n_true_negative <= self.n_predicted_negative:
            raise ValueError("true negatives exceed predicted negatives")
        for name, value in (("ppv", self.ppv), ("npv", self.npv)):
            if value is not None and not 0 <= value <= 1:
                raise ValueError(f"{name} outside [0, 1]: {value}")


def _aligned(stream: PredictionStream, label_timestamps, labels):
    label_timestamps = np.asarray(label_timestamps, dtype=np.int64)
    labels = np.asarray(labels)
    if len(label_timestamps) != len(labels):
        raise AlignmentError("labels and their timestamps differ in length")
    _, si, li = np.intersect1d(stream.timestamps, label_timestamps, return_indices=True)
    if len(si) == 0:
        raise AlignmentError("prediction stream and labels share no timestamps")
    return si, labels[li]


def ppv_npv(stream: PredictionStream, label_timestamps, labels, gamma: float) -> ConfusionSummary:
    """Buy/sell hit rates at a gamma gate, over the common timestamps."""
    si, y = _aligned(stream, label_timestamps, labels)
    actionable = stream.actionable_at(gamma)[si]
    argmax = stream.argmax[si]
    predicted_pos = actionable & (argmax == C1)
    predicted_neg = actionable & (argmax == C2)
    n_pos = int(predicted_pos.sum())
    n_neg = int(predicted_neg.sum())
    tp = int((predicted_pos & (y == C1)).sum())
    tn = int((predicted_neg & (y == C2)).sum())
    return ConfusionSummary(
        gamma=gamma,
        n_predicted_positive=n_pos,
        n_true_positive=tp,
        n_predicted_negative=n_neg,
        n_true_negative=tn,
        ppv=tp / n_pos if n_pos else None,
        npv=tn / n_neg if n_neg else None,
    )


def overall_accuracy(stream: PredictionStream, label_timestamps, labels) -> float | None:
    """Fraction of modeled bars whose argmax class matches the label; no gate.

    Bars from skipped epochs carry no prediction and are left out. None when
    every common bar is model-less.
    """
    si, y = _aligned(stream, label_timestamps, labels)
    available = stream.model_available[si]
    if not available.any():
        return None
    hits = (stream.argmax[si] == y) & available
    return float(hits.sum() / available.sum())


def acf(series, max_lag: int) -> np.ndarray:
    """Sample autocorrelation, biased (1/T) covariance estimator; acf[0] = 1."""
    x = np.asarray(series, dtype=np.float64)
    if max_lag < 0:
        raise ValueError("max_lag must be >= 0")
    if len(x) <= max_lag + 1:
        raise ValueError(f"need more than {max_lag + 1} points, have {len(x)}")
    x = x - x.mean()
    c0 = float(np.mean(x * x))
    if c0 == 0:
        raise ValueError("constant series has no autocorrelation")
    out = np.empty(max_lag + 1)
    out[0] = 1.0
    for k in range(1, max_lag + 1):
        out[k] = np.sum(x[k:] * x[:-k]) / (len(x) * c0)
    return out


def pacf(series, max_lag: int) -> np.ndarray:
    """Partial autocorrelation by Durbin-Levinson on the sample ACF; pacf[0] = 1."""
    r = acf(series, max_lag)
    out = np.empty(max_lag + 1)
    out[0] = 1.0
    if max_lag == 0:
        return out
    phi = np.zeros(max_lag + 1)  # phi[j] = coefficient j of the current order
    phi[1] = r[1]
    out[1] = r[1]
    for k in range(2, max_lag + 1):
        prev = phi[1:k].copy()
        num = r[k] - np.sum(prev * r[k - 1 : 0 : -1])
        den = 1.0 - np.sum(prev * r[1:k])
        if den == 0:
            raise ValueError(f"Durbin-Levinson breakdown at lag {k}")
        phi_kk = num / den
        phi[1:k] = prev - phi_kk * prev[::-1]
        phi[k] = phi_kk
        out[k] = phi_kk
    return out


def rolling_volatility(returns, window: int) -> np.ndarray:
    """Trailing population standard deviation; NaN until the window fills."""
    return rolling_std(np.asarray(returns, dtype=np.float64), window)


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman_correlation(x, y) -> float | None:
    """Rank correlation with average ranks for ties; None when degenerate."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) != len(y):
        raise ValueError("length mismatch")
    if len(x) < 2:
        return None
    rx = _average_ranks(x)
    ry = _average_ranks(y)
    if np.std(rx) == 0 or np.std(ry) == 0:
        return None
    return float(np.corrcoef(rx, ry)[0, 1])


@dataclass(frozen=True)
class PeriodActivity:
    start: int
    end: int
    trade_count: int
    strategy_return: float
    market_return: float
    mean_volatility: float  # NaN when the window never filled in the period


@dataclass(frozen=True)
class ActivityReport:
    period: str  # week | month
    rows: tuple[PeriodActivity, ...]
    rank_correlation: float | None  # per-period volatility vs trade count


def activity_report(
    result: BacktestResult,
    volatility: np.ndarray,
    period: str = "week",
    anchor_day: int = 5,
) -> ActivityReport:
    """Join trading activity with market volatility per calendar period.

    The rank correlation column is the trades-follow-volatility check:
    positive when the strategy trades more in rougher periods.
    """
    ts = result.timestamps
    volatility = np.asarray(volatility, dtype=np.float64)
    if len(volatility) != len(ts):
        raise AlignmentError("volatility series must align with the backtest bars")
    if len(ts) == 0:
        raise InsufficientHistoryError("empty backtest result")
    start, end = int(ts[0]), int(ts[-1])
    too_short = (
        end < shift_months(start, 1) if period == "month" else end - start < WEEK
    )
    if too_short:
        raise InsufficientHistoryError(
            f"run spans {format_iso(start)}..{format_iso(end)}, shorter than one {period}"
        )
    bounds = period_boundaries(start, end, period, anchor_day)
    cuts = [int(np.searchsorted(ts, b)) for b in bounds[:-1]] + [len(ts) - 1]
    trade_ts = np.array([tr.timestamp for tr in result.trades], dtype=np.int64)

    rows = []
    prev_owned = 0
    for k in range(len(cuts) - 1):
        i, j = cuts[k], cuts[k + 1]
        owned = int(np.searchsorted(trade_ts, ts[j], side="right"))
        window = volatility[i : j + 1]
        defined = window[np.isfinite(window)]
        rows.append(
            PeriodActivity(
                start=int(ts[i]),
                end=int(ts[j]),
                trade_count=owned - prev_owned,
                strategy_return=float(result.equity[j] / result.equity[i] - 1.0),
                market_return=float(result.closes[j] / result.closes[i] - 1.0),
                mean_volatility=float(defined.mean()) if len(defined) else float("nan"),
            )
        )
        prev_owned = owned

    usable = [r for r in rows if np.isfinite(r.mean_volatility)]
    correlation = spearman_correlation(
        np.array([r.mean_volatility for r in usable]),
        np.array([float(r.trade_count) for r in usable]),
    ) if len(usable) >= 2 else None
    return ActivityReport(period=period, rows=tuple(rows), rank_correlation=correlation)


def gamma_sweep(
    stream: PredictionStream,
    label_timestamps,
    labels,
    grid: tuple[float, ...] = DEFAULT_GAMMA_GRID,
) -> tuple[ConfusionSummary, ...]:
    """PPV/NPV over a gamma grid, pooled across the whole stream."""
    return tuple(ppv_npv(stream, label_timestamps, labels, g) for g in grid)


@dataclass(frozen=True)
class MonthlySweepRow:
    month_start: int
    summary: ConfusionSummary


def gamma_sweep_by_month(
    stream: PredictionStream,
    label_timestamps,
    labels,
    grid: tuple[float, ...] = DEFAULT_GAMMA_GRID,
    anchor_day: int = 5,
) -> tuple[MonthlySweepRow, ...]:
    """Per-month PPV/NPV curves; months anchored like the backtest reports."""
    label_timestamps = np.asarray(label_timestamps, dtype=np.int64)
    labels = np.asarray(labels)
    common, _, li = np.intersect1d(stream.timestamps, label_timestamps, return_indices=True)
    if len(common) == 0:
        raise AlignmentError("prediction stream and labels share no timestamps")
    common_labels = labels[li]
    start, end = int(common[0]), int(common[-1])
    if end == start:
        bounds = [start, end + 1]
    else:
        bounds = period_boundaries(start, end, "month", anchor_day)
    rows = []
    for k in range(len(bounds) - 1):
        lo, hi = bounds[k], bounds[k + 1]
        # month k owns bars in [lo, hi); the final month keeps its end bar
        mask = (common >= lo) & ((common <= hi) if k == len(bounds) - 2 else (common < hi))
        if not mask.any():
            continue
        for g in grid:
            rows.append(
                MonthlySweepRow(
                    month_start=lo,
                    summary=ppv_npv(stream, common[mask], common_labels[mask], g),
                )
            )
    return tuple(rows)


def _ratio_field(value: float | None) -> str:
    return "" if value is None else repr(value)


def export_gamma_sweep(summaries: tuple[ConfusionSummary, ...]) -> str:
    out = io.StringIO()
    out.write("gamma,ppv,npv,n_pos,n_neg\n")
    for s in summaries:
        out.write(
            f"{s.gamma!r},{_ratio_field(s.ppv)},{_ratio_field(s.npv)},"
            f"{s.n_predicted_positive},{s.n_predicted_negative}\n"
        )
    return out.getvalue()


def export_monthly_gamma_sweep(rows: tuple[MonthlySweepRow, ...]) -> str:
    out = io.StringIO()
    out.write("month,gamma,ppv,npv,n_pos,n_neg\n")
    for row in rows:
        s = row.summary
        out.write(
            f"{format_iso(row.month_start)},{s.gamma!r},{_ratio_field(s.ppv)},"
            f"{_ratio_field(s.npv)},{s.n_predicted_positive},{s.n_predicted_negative}\n"
        )
    return out.getvalue()


def export_acf_pacf(series, max_lag: int) -> str:
    """CSV of both diagnostics per lag, for the returns-are-noise chart."""
    a = acf(series, max_lag)
    p = pacf(series, max_lag)
    out = io.StringIO()
    out.write("lag,acf,pacf\n")
    for k in range(max_lag + 1):
        out.write(f"{k},{float(a[k])!r},{float(p[k])!r}\n")
    return out.getvalue()


def export_activity_report(report: ActivityReport) -> str:
    out = io.StringIO()
    out.write("period_start,period_end,trade_count,strategy_return,market_return,mean_volatility\n")
    for r in report.rows:
        vol = "" if not np.isfinite(r.mean_volatility) else repr(r.mean_volatility)
        out.write(
            f"{format_iso(r.start)},{format_iso(r.end)},{r.trade_count},"
            f"{r.strategy_return!r},{r.market_return!r},{vol}\n"
        )
    return out.getvalue()
