"""Declarative run configuration: one TOML file describes a whole experiment.

The effective config (defaults resolved) is echoed back into the output
directory so a run can be reproduced from its own artifacts. Relative data
paths resolve against the config file's directory, or against
CANDLEWALK_DATA_DIR when set; CANDLEWALK_OUT_DIR overrides the output
directory. Environment overrides touch paths only, never parameters.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .backtest import StrategyConfig
from .errors import ConfigError
from .indicators import DEFAULT_FEATURE_SET, IndicatorConfig
from .labeling import DEFAULT_THRESHOLD
from .metrics import DEFAULT_GAMMA_GRID
from .svm import REGULARIZATION_GRID

DATA_DIR_ENV = "CANDLEWALK_DATA_DIR"
OUT_DIR_ENV = "CANDLEWALK_OUT_DIR"


@dataclass(frozen=True)
class SeriesConfig:
    """One symbol: either a CSV file on disk or a seeded synthetic series."""

    symbol: str
    path: str | None = None
    synthetic_bars: int | None = None
    synthetic_noise: float = 0.10
    seed: int = 0

    def __post_init__(self):
        if not self.symbol:
            raise ConfigError("series needs a symbol")
        if (self.path is None) == (self.synthetic_bars is None):
            raise ConfigError(
                f"series {self.symbol!r} needs exactly one of path / synthetic_bars"
            )
        if self.synthetic_bars is not None and self.synthetic_bars < 10:
            raise ConfigError(f"series {self.symbol!r}: synthetic_bars must be >= 10")
        if not 0 <= self.synthetic_noise < 1:
            raise ConfigError(f"series {self.symbol!r}: synthetic_noise must be in [0, 1)")


@dataclass(frozen=True)
class RunConfig:
    series: tuple[SeriesConfig, ...]
    out_dir: str = "out"
    response_mode: str = "paper"
    threshold: float = DEFAULT_THRESHOLD
    features: tuple[str, ...] = DEFAULT_FEATURE_SET
    indicators: IndicatorConfig = field(default_factory=IndicatorConfig)
    strategy: StrategyConfig = field(default_factory=StrategyConfig)
    window_months: int = 9
    retrain_months: int = 1
    anchor_day: int = 5
    regularization_grid: tuple[float, ...] = REGULARIZATION_GRID
    max_lag: int = 50
    volatility_window: int = 168  # one week of hourly bars
    activity_period: str = "week"
    emit_plots: bool = True
    sweep_gammas: tuple[float, ...] = DEFAULT_GAMMA_GRID
    sweep_c_values: tuple[float, ...] = ()  # empty: keep per-epoch selection

    def __post_init__(self):
        if not self.series:
            raise ConfigError("config lists no series")
        symbols = [s.symbol for s in self.series]
        if len(set(symbols)) != len(symbols):
            raise ConfigError("duplicate series symbols")
        if self.response_mode not in ("paper", "plain_log"):
            raise ConfigError(f"unknown response_mode {self.response_mode!r}")
        if not 0 < self.threshold < 1:
            raise ConfigError(f"threshold must be in (0, 1), got {self.threshold}")
        if self.window_months < 1 or self.retrain_months < 1:
            raise ConfigError("window_months and retrain_months must be >= 1")
        if not 1 <= self.anchor_day <= 28:
            raise ConfigError(f"anchor_day must be in 1..28, got {self.anchor_day}")
        if not self.regularization_grid or any(c <= 0 for c in self.regularization_grid):
            raise ConfigError("regularization_grid must list positive values")
        if self.max_lag < 1:
            raise ConfigError("max_lag must be >= 1")
        if self.volatility_window < 2:
            raise ConfigError("volatility_window must be >= 2")
        if self.activity_period not in ("week", "month"):
            raise ConfigError(f"activity_period must be week or month, got {self.activity_period!r}")
        if any(g < 0 for g in self.sweep_gammas):
            raise ConfigError("sweep gammas must be >= 0")
        if any(c <= 0 for c in self.sweep_c_values):
            raise ConfigError("sweep C values must be positive")


def _take(table: dict, key: str, default):
    value = table.pop(key, default)
    if default is not None and value is not None and not isinstance(value, type(default)):
        # TOML ints arrive for float fields like gamma = 0; coerce numerics only
        if isinstance(default, float) and isinstance(value, int):
            return float(value)
        raise ConfigError(f"config key {key!r} has type {type(value).__name__}")
    return value


def _reject_unknown(table: dict, where: str):
    if table:
        raise ConfigError(f"unknown config keys in {where}: {', '.join(sorted(table))}")


def load_config(path) -> RunConfig:
    """Parse and validate a TOML run config; resolve data paths."""
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error in {path}: {exc}")

    data_root = Path(os.environ.get(DATA_DIR_ENV) or path.parent)

    series = []
    for i, entry in enumerate(list(raw.pop("series", []))):
        if not isinstance(entry, dict):
            raise ConfigError("each [[series]] entry must be a table")
        symbol = _take(entry, "symbol", "")
        file_path = entry.pop("path", None)
        if file_path is not None:
            # absolute so the echoed config reloads identically from anywhere
            resolved = Path(file_path) if Path(file_path).is_absolute() else data_root / file_path
            file_path = str(resolved.resolve())
        cfg = SeriesConfig(
            symbol=symbol,
            path=file_path,
            synthetic_bars=entry.pop("synthetic_bars", None),
            synthetic_noise=_take(entry, "synthetic_noise", 0.10),
            seed=_take(entry, "seed", 0),
        )
        _reject_unknown(entry, f"series[{i}]")
        if cfg.path is not None and not Path(cfg.path).is_file():
            raise ConfigError(f"series {cfg.symbol!r}: data file not found: {cfg.path}")
        series.append(cfg)

    ind = raw.pop("indicators", {})
    indicators = IndicatorConfig(
        bollinger_window=_take(ind, "bollinger_window", 20),
        macd_fast=_take(ind, "macd_fast", 12),
        macd_slow=_take(ind, "macd_slow", 26),
        macd_signal=_take(ind, "macd_signal", 26),
        rsi_window=_take(ind, "rsi_window", 14),
    )
    _reject_unknown(ind, "[indicators]")

    strat = raw.pop("strategy", {})
    strategy = StrategyConfig(
        gamma=_take(strat, "gamma", 0.0),
        take_profit=_take(strat, "take_profit", 0.10),
        stop_loss=_take(strat, "stop_loss", 0.05),
        fee=_take(strat, "fee", 0.0025),
        initial_cash=_take(strat, "initial_cash", 100.0),
    )
    _reject_unknown(strat, "[strategy]")

    wf = raw.pop("walkforward", {})
    window_months = _take(wf, "window_months", 9)
    retrain_months = _take(wf, "retrain_months", 1)
    anchor_day = _take(wf, "anchor_day", 5)
    grid = tuple(float(c) for c in wf.pop("regularization_grid", list(REGULARIZATION_GRID)))
    _reject_unknown(wf, "[walkforward]")

    rep = raw.pop("reports", {})
    max_lag = _take(rep, "max_lag", 50)
    volatility_window = _take(rep, "volatility_window", 168)
    activity_period = _take(rep, "activity_period", "week")
    emit_plots = bool(rep.pop("emit_plots", True))
    _reject_unknown(rep, "[reports]")

    sweep = raw.pop("sweep", {})
    sweep_gammas = tuple(float(g) for g in sweep.pop("gammas", list(DEFAULT_GAMMA_GRID)))
    sweep_c_values = tuple(float(c) for c in sweep.pop("c_values", []))
    _reject_unknown(sweep, "[sweep]")

    out_dir = os.environ.get(OUT_DIR_ENV) or _take(raw, "out_dir", "out")
    raw.pop("out_dir", None)
    features = tuple(str(f) for f in raw.pop("features", list(DEFAULT_FEATURE_SET)))
    config = RunConfig(
        series=tuple(series),
        out_dir=str(out_dir),
        response_mode=_take(raw, "response_mode", "paper"),
        threshold=_take(raw, "threshold", DEFAULT_THRESHOLD),
        features=features,
        indicators=indicators,
        strategy=strategy,
        window_months=window_months,
        retrain_months=retrain_months,
        anchor_day=anchor_day,
        regularization_grid=grid,
        max_lag=max_lag,
        volatility_window=volatility_window,
        activity_period=activity_period,
        emit_plots=emit_plots,
        sweep_gammas=sweep_gammas,
        sweep_c_values=sweep_c_values,
    )
    _reject_unknown(raw, "top level")
    return config


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        escaped = value.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(value, tuple):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise TypeError(f"cannot serialize {type(value).__name__}")


def effective_config_toml(config: RunConfig) -> str:
    """Echo the fully resolved config as TOML; reloading it reproduces the run."""
    lines = [
        f"out_dir = {_toml_value(config.out_dir)}",
        f"response_mode = {_toml_value(config.response_mode)}",
        f"threshold = {_toml_value(config.threshold)}",
        f"features = {_toml_value(config.features)}",
        "",
        "[indicators]",
        f"bollinger_window = {_toml_value(config.indicators.bollinger_window)}",
        f"macd_fast = {_toml_value(config.indicators.macd_fast)}",
        f"macd_slow = {_toml_value(config.indicators.macd_slow)}",
        f"macd_signal = {_toml_value(config.indicators.macd_signal)}",
        f"rsi_window = {_toml_value(config.indicators.rsi_window)}",
        "",
        "[strategy]",
        f"gamma = {_toml_value(config.strategy.gamma)}",
        f"take_profit = {_toml_value(config.strategy.take_profit)}",
        f"stop_loss = {_toml_value(config.strategy.stop_loss)}",
        f"fee = {_toml_value(config.strategy.fee)}",
        f"initial_cash = {_toml_value(config.strategy.initial_cash)}",
        "",
        "[walkforward]",
        f"window_months = {_toml_value(config.window_months)}",
        f"retrain_months = {_toml_value(config.retrain_months)}",
        f"anchor_day = {_toml_value(config.anchor_day)}",
        f"regularization_grid = {_toml_value(config.regularization_grid)}",
        "",
        "[reports]",
        f"max_lag = {_toml_value(config.max_lag)}",
        f"volatility_window = {_toml_value(config.volatility_window)}",
        f"activity_period = {_toml_value(config.activity_period)}",
        f"emit_plots = {_toml_value(config.emit_plots)}",
        "",
        "[sweep]",
        f"gammas = {_toml_value(config.sweep_gammas)}",
        f"c_values = {_toml_value(config.sweep_c_values)}",
    ]
    for s in config.series:
        lines += ["", "[[series]]", f"symbol = {_toml_value(s.symbol)}"]
        if s.path is not None:
            lines.append(f"path = {_toml_value(s.path)}")
        else:
            lines.append(f"synthetic_bars = {_toml_value(s.synthetic_bars)}")
            lines.append(f"synthetic_noise = {_toml_value(s.synthetic_noise)}")
            lines.append(f"seed = {_toml_value(s.seed)}")
    return "\n".join(lines) + "\n"
