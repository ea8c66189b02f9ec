"""Long-only all-in trading simulation driven by a prediction stream.

State machine per hourly bar: in cash, an actionable c1 score buys at the
close; in position, an actionable c2 score sells at the close, and otherwise
the position exits when the gain since entry reaches the take-profit or the
loss reaches the stop-loss. Fees are charged per side on traded notional.
Fills happen at the decision bar's close, the same price the prediction was
computed from, so runs are exactly reproducible.

The stop-loss is a positive loss magnitude: a position exits when the return
since entry is <= -stop_loss.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass

import numpy as np

from .errors import AlignmentError, CandleDataError, ConfigError, InsufficientHistoryError
from .labeling import C1, C2
from .market_data import CandleSeries
from .timeutil import format_iso, period_boundaries, shift_months
from .walkforward import PredictionStream

DEFAULT_FEE = 0.0025

TRIGGER_SIGNAL = "signal"
TRIGGER_TAKE_PROFIT = "take_profit"
TRIGGER_STOP_LOSS = "stop_loss"


@dataclass(frozen=True)
class StrategyConfig:
    gamma: float = 0.0
    take_profit: float = 0.10
    stop_loss: float = 0.05  # loss magnitude; exit when return <= -stop_loss
    fee: float = DEFAULT_FEE
    initial_cash: float = 100.0

    def __post_init__(self):
        if not np.isfinite(self.gamma) or self.gamma < 0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")
        if not 0 <= self.fee <= 0.01:
            raise ConfigError(f"fee must be in [0, 0.01], got {self.fee}")
        if not self.take_profit > 0:
            raise ConfigError(f"take_profit must be > 0, got {self.take_profit}")
        if not self.stop_loss > 0:
            raise ConfigError(f"stop_loss must be > 0, got {self.stop_loss}")
        if not self.initial_cash > 0:
            raise ConfigError(f"initial_cash must be > 0, got {self.initial_cash}")


@dataclass(frozen=True)
class PortfolioState:
    """All-in wallet: exactly one of cash and coins is nonzero."""

    cash: float
    coins: float = 0.0
    entry_value: float = 0.0  # portfolio value at the last buy

    @property
    def in_position(self) -> bool:
        return self.coins > 0

    def value_at(self, price: float) -> float:
        return self.coins * price if self.in_position else self.cash


@dataclass(frozen=True)
class TradeRecord:
    side: str  # buy | sell
    timestamp: int
    unit_price: float
    quantity: float  # coins bought or sold
    fee_paid: float  # quote currency
    trigger: str  # signal | take_profit | stop_loss


@dataclass(frozen=True)
class BacktestResult:
    timestamps: np.ndarray  # int64, one per stream bar
    equity: np.ndarray  # float64, marked at each bar's close
    closes: np.ndarray  # float64, close prices backing the run
    trades: tuple[TradeRecord, ...]
    config: StrategyConfig
    final_state: PortfolioState

    def __post_init__(self):
        n = len(self.timestamps)
        if len(self.equity) != n or len(self.closes) != n:
            raise ValueError("equity curve must cover every bar")
        if n and not np.all(self.equity > 0):
            raise ValueError("portfolio value must stay positive")


def execute_buy(state: PortfolioState, price: float, fee: float) -> PortfolioState:
    """Convert all cash into coins at price, paying fee on the cash spent."""
    if state.in_position:
        raise ValueError("buy while already in position")
    if not price > 0:
        raise ValueError(f"price must be positive, got {price}")
    return PortfolioState(
        cash=0.0,
        coins=state.cash * (1.0 - fee) / price,
        entry_value=state.cash,
    )


def execute_sell(state: PortfolioState, price: float, fee: float) -> PortfolioState:
    """Convert all coins into cash at price, paying fee on the proceeds."""
    if not state.in_position:
        raise ValueError("sell with no position")
    if not price > 0:
        raise ValueError(f"price must be positive, got {price}")
    return PortfolioState(cash=state.coins * price * (1.0 - fee))


def check_exit(state: PortfolioState, price: float, take_profit: float, stop_loss: float) -> str | None:
    """Trigger name when the position's return since entry breaches a limit."""
    if not state.in_position or not state.entry_value > 0:
        raise ValueError("exit check requires an open position")
    gain = (state.coins * price - state.entry_value) / state.entry_value
    if gain >= take_profit:
        return TRIGGER_TAKE_PROFIT
    if gain <= -stop_loss:
        return TRIGGER_STOP_LOSS
    return None


def run_backtest(
    stream: PredictionStream,
    prices: CandleSeries,
    config: StrategyConfig = StrategyConfig(),
) -> BacktestResult:
    """Replay the strategy over the stream's bars, one decision per hour.

    Bar order: a cash wallet buys on an actionable c1; a position sells on an
    actionable c2, and otherwise exit limits are checked, so a signal sell is
    never doubly exited. The gamma gate is re-evaluated from the stream's
    stored scores at config.gamma. An open position at the end stays open,
    marked at the last close.
    """
    idx = np.searchsorted(prices.timestamps, stream.timestamps)
    inside = idx < len(prices.timestamps)
    matched = np.zeros(len(stream.timestamps), dtype=bool)
    matched[inside] = prices.timestamps[idx[inside]] == stream.timestamps[inside]
    if not matched.all():
        missing = int(stream.timestamps[~matched][0])
        raise AlignmentError(f"no price bar at {format_iso(missing)}")
    closes = prices.closes[idx]
    if not np.all(closes > 0):
        bad = int(stream.timestamps[closes <= 0][0])
        raise CandleDataError(f"non-positive close at {format_iso(bad)}")

    actionable = stream.actionable_at(config.gamma)
    buy_signal = actionable & (stream.argmax == C1)
    sell_signal = actionable & (stream.argmax == C2)

    state = PortfolioState(cash=config.initial_cash)
    trades: list[TradeRecord] = []
    equity = np.empty(len(closes))

    for t in range(len(closes)):
        price = float(closes[t])
        ts = int(stream.timestamps[t])
        if not state.in_position and buy_signal[t]:
            spent = state.cash
            state = execute_buy(state, price, config.fee)
            trades.append(
                TradeRecord("buy", ts, price, state.coins, spent * config.fee, TRIGGER_SIGNAL)
            )
        elif state.in_position and sell_signal[t]:
            sold = state.coins
            state = execute_sell(state, price, config.fee)
            trades.append(
                TradeRecord("sell", ts, price, sold, sold * price * config.fee, TRIGGER_SIGNAL)
            )
        if state.in_position:
            trigger = check_exit(state, price, config.take_profit, config.stop_loss)
            if trigger is not None:
                sold = state.coins
                state = execute_sell(state, price, config.fee)
                trades.append(
                    TradeRecord("sell", ts, price, sold, sold * price * config.fee, trigger)
                )
        equity[t] = state.value_at(price)

    equity.setflags(write=False)
    return BacktestResult(
        timestamps=stream.timestamps,
        equity=equity,
        closes=closes,
        trades=tuple(trades),
        config=config,
        final_state=state,
    )


@dataclass(frozen=True)
class MonthRow:
    start: int
    end: int
    strategy_return: float
    market_return: float
    trade_count: int


@dataclass(frozen=True)
class BacktestSummary:
    months: tuple[MonthRow, ...]
    compounded_return: float
    market_compounded_return: float
    return_std: float  # population std of monthly strategy returns
    correlation: float | None  # strategy vs market monthly returns
    trade_count: int
    initial_cash: float
    final_value: float


def summarize(result: BacktestResult, anchor_day: int = 5) -> BacktestSummary:
    """Monthly net returns against buy-and-hold, months anchored on day 5.

    Leading and trailing partial months are clipped to the run's own span, so
    monthly strategy returns always compound exactly to the total equity
    ratio. Correlation needs at least two months and nonzero variance on both
    sides; otherwise it is reported as unavailable.
    """
    ts = result.timestamps
    if len(ts) == 0:
        raise InsufficientHistoryError("empty backtest result")
    start, end = int(ts[0]), int(ts[-1])
    if end < shift_months(start, 1):
        raise InsufficientHistoryError(
            f"run spans {format_iso(start)}..{format_iso(end)}, shorter than one month"
        )
    bounds = period_boundaries(start, end, "month", anchor_day)
    # bar index at each boundary; month k covers bars [cut_k, cut_{k+1}]
    cuts = [int(np.searchsorted(ts, b)) for b in bounds[:-1]] + [len(ts) - 1]
    trade_ts = np.array([tr.timestamp for tr in result.trades], dtype=np.int64)

    months = []
    prev_owned = 0  # trades are partitioned by sell-side boundary ownership
    for k in range(len(cuts) - 1):
        i, j = cuts[k], cuts[k + 1]
        owned = int(np.searchsorted(trade_ts, ts[j], side="right"))
        months.append(
            MonthRow(
                start=int(ts[i]),
                end=int(ts[j]),
                strategy_return=float(result.equity[j] / result.equity[i] - 1.0),
                market_return=float(result.closes[j] / result.closes[i] - 1.0),
                trade_count=owned - prev_owned,
            )
        )
        prev_owned = owned

    strat = np.array([m.strategy_return for m in months])
    market = np.array([m.market_return for m in months])
    correlation: float | None = None
    if len(months) >= 2 and np.std(strat) > 0 and np.std(market) > 0:
        correlation = float(np.corrcoef(strat, market)[0, 1])
    return BacktestSummary(
        months=tuple(months),
        compounded_return=float(np.prod(1.0 + strat) - 1.0),
        market_compounded_return=float(np.prod(1.0 + market) - 1.0),
        return_std=float(np.std(strat)),
        correlation=correlation,
        trade_count=len(result.trades),
        initial_cash=result.config.initial_cash,
        final_value=float(result.equity[-1]),
    )


def export_trades(trades: tuple[TradeRecord, ...]) -> str:
    """Trade ledger CSV: side,timestamp,unit_price,quantity,fee,trigger."""
    out = io.StringIO()
    out.write("side,timestamp,unit_price,quantity,fee,trigger\n")
    for tr in trades:
        out.write(
            f"{tr.side},{format_iso(tr.timestamp)},{tr.unit_price!r},"
            f"{tr.quantity!r},{tr.fee_paid!r},{tr.trigger}\n"
        )
    return out.getvalue()


def export_equity_curve(result: BacktestResult) -> str:
    """Equity CSV with a growth-of-100 market column for comparison."""
    out = io.StringIO()
    out.write("timestamp,portfolio_value,market_value_of_100\n")
    base = float(result.closes[0])
    for t in range(len(result.timestamps)):
        market = 100.0 * float(result.closes[t]) / base
        out.write(
            f"{format_iso(int(result.timestamps[t]))},{float(result.equity[t])!r},{market!r}\n"
        )
    return out.getvalue()


def summary_json(summary: BacktestSummary) -> str:
    payload = {
        "months": [
            {
                "start": format_iso(m.start),
                "end": format_iso(m.end),
                "strategy_return": m.strategy_return,
                "market_return": m.market_return,
                "trade_count": m.trade_count,
            }
            for m in summary.months
        ],
        "compounded_return": summary.compounded_return,
        "market_compounded_return": summary.market_compounded_return,
        "return_std": summary.return_std,
        "correlation": summary.correlation,
        "trade_count": summary.trade_count,
        "initial_cash": summary.initial_cash,
        "final_value": summary.final_value,
    }
    return json.dumps(payload, indent=2) + "\n"
