"""Batch front end wiring the pipeline: ingest, features, backtest, sweep, report.

Every command reads one TOML config and writes a deterministic artifact tree
under the output directory. Files whose content is unchanged are not rewritten,
so reruns are idempotent and cache hits are visible as untouched mtimes. A
failing command removes the files it wrote in that invocation.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .backtest import (
    BacktestResult,
    StrategyConfig,
    export_equity_curve,
    export_trades,
    run_backtest,
    summarize,
    summary_json,
)
from .charts import bar_chart, line_chart
from .config import RunConfig, SeriesConfig, effective_config_toml, load_config
from .errors import ConfigError
from .indicators import build_feature_matrix, export_feature_matrix
from .labeling import (
    CLASS_NAMES,
    build_labeled_dataset,
    export_labeled_dataset,
    rolling_class_proportions,
)
from .market_data import (
    CandleFormat,
    CandleSeries,
    compute_response,
    parse_candles,
    repair_report_json,
    serialize_candles,
    validate_and_repair,
)
from .metrics import (
    activity_report,
    export_acf_pacf,
    export_activity_report,
    export_gamma_sweep,
    export_monthly_gamma_sweep,
    gamma_sweep,
    gamma_sweep_by_month,
    overall_accuracy,
    ppv_npv,
    rolling_volatility,
)
from .svm import model_to_json
from .synthetic import generate_planted_series
from .timeutil import HOUR, format_iso
from .walkforward import (
    PredictionStream,
    export_prediction_stream,
    make_schedule,
    parse_prediction_stream,
    run_walkforward,
)

log = logging.getLogger("candlewalk")


class Workspace:
    """Output tree that only rewrites changed files and can undo a failed run."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.written: list[Path] = []

    def write(self, rel: str, text: str) -> Path:
        path = self.root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        if path.is_file() and path.read_text(encoding="utf-8") == text:
            return path  # identical content: keep bytes and mtime
        path.write_text(text, encoding="utf-8", newline="")
        self.written.append(path)
        return path

    def read(self, rel: str) -> str | None:
        path = self.root / rel
        return path.read_text(encoding="utf-8") if path.is_file() else None

    def discard_written(self):
        for path in self.written:
            try:
                path.unlink()
            except OSError:
                pass


def _digest(*parts: str) -> str:
    h = hashlib.sha256()
    for part in parts:
        h.update(part.encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()


def _feature_params(run: RunConfig) -> str:
    ind = run.indicators
    return json.dumps(
        {
            "response_mode": run.response_mode,
            "threshold": run.threshold,
            "features": list(run.features),
            "indicators": [
                ind.bollinger_window,
                ind.macd_fast,
                ind.macd_slow,
                ind.macd_signal,
                ind.rsi_window,
            ],
        },
        sort_keys=True,
    )


def _prediction_params(run: RunConfig, grid: tuple[float, ...], gamma: float) -> str:
    return json.dumps(
        {
            "window_months": run.window_months,
            "retrain_months": run.retrain_months,
            "anchor_day": run.anchor_day,
            "grid": list(grid),
            "gamma": gamma,
        },
        sort_keys=True,
    )


def ingest_symbol(run: RunConfig, s: SeriesConfig, ws: Workspace, seed: int) -> CandleSeries:
    """Normalize one symbol's candles onto disk; returns the repaired series."""
    if s.path is not None:
        raw = parse_candles(Path(s.path).read_text(encoding="utf-8"), CandleFormat(symbol=s.symbol))
        source = s.path
    else:
        raw = generate_planted_series(
            s.synthetic_bars, seed=seed, noise_rate=s.synthetic_noise, symbol=s.symbol
        ).series
        source = f"synthetic seed={seed} bars={s.synthetic_bars} noise={s.synthetic_noise}"
    series, repairs = validate_and_repair(raw)
    ws.write(f"data/{s.symbol}.csv", serialize_candles(series))
    ws.write(f"data/{s.symbol}_repairs.json", repair_report_json(repairs))
    log.info("ingest %s: %d candles, %d repairs (%s)", s.symbol, len(series), len(repairs), source)
    return series


def load_normalized(run: RunConfig, s: SeriesConfig, ws: Workspace) -> CandleSeries | None:
    text = ws.read(f"data/{s.symbol}.csv")
    if text is None:
        return None
    series, _ = validate_and_repair(parse_candles(text, CandleFormat(symbol=s.symbol)))
    return series


def features_symbol(run: RunConfig, s: SeriesConfig, ws: Workspace, series: CandleSeries):
    """Build the feature matrix and labels; write them unless already current."""
    features = build_feature_matrix(
        series, run.indicators, run.features, response_mode=run.response_mode
    )
    responses = compute_response(series, mode=run.response_mode)
    dataset = build_labeled_dataset(features, responses, threshold=run.threshold)

    manifest = json.dumps(
        {"data": _digest(serialize_candles(series)), "params": _feature_params(run)},
        sort_keys=True,
    )
    rel = f"{s.symbol}/features_manifest.json"
    if ws.read(rel) == manifest:
        log.info("features %s: cache hit, outputs untouched", s.symbol)
    else:
        ws.write(f"{s.symbol}/features.csv", export_feature_matrix(features))
        ws.write(f"{s.symbol}/labels.csv", export_labeled_dataset(dataset))
        ws.write(rel, manifest)
        log.info(
            "features %s: %d rows x %d columns, %d labeled",
            s.symbol, len(features.timestamps), len(features.feature_names), len(dataset.timestamps),
        )
    return features, dataset


def predictions_symbol(
    run: RunConfig,
    s: SeriesConfig,
    ws: Workspace,
    features,
    dataset,
    grid: tuple[float, ...] | None = None,
) -> PredictionStream:
    """Walk-forward train and score; cached on disk keyed by data and params."""
    grid = run.regularization_grid if grid is None else grid
    gamma = run.strategy.gamma
    manifest = json.dumps(
        {
            "features": json.loads(ws.read(f"{s.symbol}/features_manifest.json") or "{}"),
            "params": _prediction_params(run, grid, gamma),
        },
        sort_keys=True,
    )
    rel = f"{s.symbol}/predictions_manifest.json"
    cached = ws.read(f"{s.symbol}/predictions.csv")
    if cached is not None and ws.read(rel) == manifest:
        log.info("predictions %s: cache hit", s.symbol)
        return parse_prediction_stream(cached, gamma=gamma)

    schedule = make_schedule(
        int(features.timestamps[0]),
        int(features.timestamps[-1]) + HOUR,  # predict_end is exclusive
        window_months=run.window_months,
        retrain_months=run.retrain_months,
        anchor_day=run.anchor_day,
    )
    stream = run_walkforward(features, dataset, schedule, gamma, regularization_grid=grid)
    ws.write(f"{s.symbol}/predictions.csv", export_prediction_stream(stream))
    epochs_payload = []
    for i, er in enumerate(stream.epochs):
        epochs_payload.append(
            {
                "train_start": format_iso(er.epoch.train_start),
                "train_end": format_iso(er.epoch.train_end),
                "predict_start": format_iso(er.epoch.predict_start),
                "predict_end": format_iso(er.epoch.predict_end),
                "skipped": er.skipped,
                "reason": er.reason,
                "train_rows": er.train_rows,
                "chosen_c": er.regularization.chosen if er.regularization else None,
                "fallback": er.regularization.fallback if er.regularization else None,
            }
        )
        if er.model is not None:
            ws.write(f"{s.symbol}/models/epoch_{i:03d}.json", model_to_json(er.model))
    ws.write(f"{s.symbol}/epochs.json", json.dumps(epochs_payload, indent=2) + "\n")
    ws.write(rel, manifest)
    skipped = sum(1 for er in stream.epochs if er.skipped)
    log.info(
        "predictions %s: %d bars over %d epochs (%d skipped)",
        s.symbol, len(stream), len(stream.epochs), skipped,
    )
    return stream


def _log_return_volatility(series: CandleSeries, window: int) -> np.ndarray:
    """Rolling volatility of hourly log returns, stamped at the window's last bar."""
    logs = np.log(series.closes)
    returns = np.diff(logs)
    vol = rolling_volatility(returns, window)
    return np.concatenate([[np.nan], vol])  # bar 0 has no return


def reports_symbol(
    run: RunConfig,
    s: SeriesConfig,
    ws: Workspace,
    series: CandleSeries,
    dataset,
    stream: PredictionStream,
    subdir: str = "",
    strategy: StrategyConfig | None = None,
    plots: bool | None = None,
) -> BacktestResult:
    """Backtest the stream and emit the full report set under <symbol>/<subdir>."""
    strategy = run.strategy if strategy is None else strategy
    plots = run.emit_plots if plots is None else plots
    prefix = f"{s.symbol}/{subdir}" if subdir else f"{s.symbol}/"
    result = run_backtest(stream, series, strategy)
    summary = summarize(result, anchor_day=run.anchor_day)

    ws.write(prefix + "ledger.csv", export_trades(result.trades))
    ws.write(prefix + "equity.csv", export_equity_curve(result))
    ws.write(prefix + "summary.json", summary_json(summary))

    vol_full = _log_return_volatility(series, run.volatility_window)
    idx = np.searchsorted(series.timestamps, result.timestamps)
    report = activity_report(
        result, vol_full[idx], period=run.activity_period, anchor_day=run.anchor_day
    )
    ws.write(prefix + "activity.csv", export_activity_report(report))

    hit = ppv_npv(stream, dataset.timestamps, dataset.labels, strategy.gamma)
    acc = overall_accuracy(stream, dataset.timestamps, dataset.labels)
    metrics_payload = {
        "symbol": s.symbol,
        "gamma": strategy.gamma,
        "threshold": run.threshold,
        "bars": len(stream),
        "trade_count": summary.trade_count,
        "net_return": summary.compounded_return,
        "market_return": summary.market_compounded_return,
        "monthly_return_std": summary.return_std,
        "strategy_market_correlation": summary.correlation,
        "overall_accuracy": acc,
        "ppv": hit.ppv,
        "npv": hit.npv,
        "n_predicted_positive": hit.n_predicted_positive,
        "n_predicted_negative": hit.n_predicted_negative,
        "volatility_trade_rank_correlation": report.rank_correlation,
    }
    ws.write(prefix + "metrics.json", json.dumps(metrics_payload, indent=2) + "\n")

    ws.write(
        prefix + "gamma_sweep.csv",
        export_gamma_sweep(gamma_sweep(stream, dataset.timestamps, dataset.labels)),
    )
    ws.write(
        prefix + "gamma_sweep_monthly.csv",
        export_monthly_gamma_sweep(
            gamma_sweep_by_month(stream, dataset.timestamps, dataset.labels, anchor_day=run.anchor_day)
        ),
    )
    returns = np.diff(np.log(series.closes))
    ws.write(prefix + "acf_pacf.csv", export_acf_pacf(returns, run.max_lag))

    # same span as the training window: 720 hourly bars per month
    proportions = rolling_class_proportions(dataset.labels, window_bars=720 * run.window_months)
    prop_lines = ["timestamp," + ",".join(CLASS_NAMES)]
    for i in range(len(dataset.timestamps)):
        row = proportions[i]
        cells = "," .join("" if np.isnan(v) else repr(float(v)) for v in row)
        prop_lines.append(f"{format_iso(int(dataset.timestamps[i]))},{cells}")
    ws.write(prefix + "class_proportions.csv", "\n".join(prop_lines) + "\n")

    if plots:
        market = 100.0 * result.closes / result.closes[0]
        ws.write(
            prefix + "equity.svg",
            line_chart(
                [
                    ("strategy", result.timestamps, result.equity),
                    ("market", result.timestamps, market),
                ],
                title=f"{s.symbol}: growth of 100, strategy vs market",
            ),
        )
        labels = [format_iso(m.start)[:7] for m in summary.months]
        ws.write(
            prefix + "monthly_returns.svg",
            bar_chart(
                labels,
                [
                    ("strategy", np.array([m.strategy_return for m in summary.months])),
                    ("market", np.array([m.market_return for m in summary.months])),
                ],
                title=f"{s.symbol}: monthly net returns",
            ),
        )
    def fmt(ret: float) -> str:
        ratio = 1.0 + ret
        return f"x{ratio:.3g}" if ratio > 10 or ratio < 0.1 else f"{100 * ret:+.2f}%"

    log.info(
        "backtest %s%s: %d trades, net %s, market %s",
        s.symbol, f" [{subdir.rstrip('/')}]" if subdir else "",
        summary.trade_count, fmt(summary.compounded_return), fmt(summary.market_compounded_return),
    )
    return result


def _seed_for(args, s: SeriesConfig, index: int) -> int:
    return (args.seed + index) if args.seed is not None else s.seed


def cmd_ingest(run: RunConfig, ws: Workspace, args) -> None:
    for i, s in enumerate(run.series):
        ingest_symbol(run, s, ws, _seed_for(args, s, i))


def cmd_features(run: RunConfig, ws: Workspace, args) -> None:
    for i, s in enumerate(run.series):
        series = load_normalized(run, s, ws) or ingest_symbol(run, s, ws, _seed_for(args, s, i))
        features_symbol(run, s, ws, series)


def cmd_backtest(run: RunConfig, ws: Workspace, args) -> None:
    for i, s in enumerate(run.series):
        series = load_normalized(run, s, ws) or ingest_symbol(run, s, ws, _seed_for(args, s, i))
        features, dataset = features_symbol(run, s, ws, series)
        stream = predictions_symbol(run, s, ws, features, dataset)
        reports_symbol(run, s, ws, series, dataset, stream)


def cmd_report(run: RunConfig, ws: Workspace, args) -> None:
    """Re-emit reports from cached predictions; no retraining happens here."""
    for s in run.series:
        text = ws.read(f"{s.symbol}/predictions.csv")
        if text is None:
            raise ConfigError(f"no cached predictions for {s.symbol}; run backtest first")
        series = load_normalized(run, s, ws)
        if series is None:
            raise ConfigError(f"no normalized data for {s.symbol}; run backtest first")
        stream = parse_prediction_stream(text, gamma=run.strategy.gamma)
        features = build_feature_matrix(
            series, run.indicators, run.features, response_mode=run.response_mode
        )
        dataset = build_labeled_dataset(
            features, compute_response(series, mode=run.response_mode), threshold=run.threshold
        )
        reports_symbol(run, s, ws, series, dataset, stream)


def _sweep_tag(gamma: float, c: float | None) -> str:
    c_part = "select" if c is None else repr(c)
    return f"sweep/gamma_{gamma!r}_C_{c_part}/"


def cmd_sweep(run: RunConfig, ws: Workspace, args) -> None:
    """Grid over gamma (and optionally a pinned C) per symbol; ranked table out."""
    c_choices: list[float | None] = list(run.sweep_c_values) or [None]
    rows = []
    for i, s in enumerate(run.series):
        series = load_normalized(run, s, ws) or ingest_symbol(run, s, ws, _seed_for(args, s, i))
        features, dataset = features_symbol(run, s, ws, series)

        def stream_for(c: float | None):
            if c is None:
                return predictions_symbol(run, s, ws, features, dataset)
            schedule = make_schedule(
                int(features.timestamps[0]),
                int(features.timestamps[-1]) + HOUR,
                window_months=run.window_months,
                retrain_months=run.retrain_months,
                anchor_day=run.anchor_day,
            )
            return run_walkforward(
                features, dataset, schedule, run.strategy.gamma, regularization_grid=(c,)
            )

        with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
            streams = dict(zip(c_choices, pool.map(stream_for, c_choices)))

        def run_point(point):
            gamma, c = point
            strategy = StrategyConfig(
                gamma=gamma,
                take_profit=run.strategy.take_profit,
                stop_loss=run.strategy.stop_loss,
                fee=run.strategy.fee,
                initial_cash=run.strategy.initial_cash,
            )
            try:
                result = reports_symbol(
                    run, s, ws, series, dataset, streams[c],
                    subdir=_sweep_tag(gamma, c), strategy=strategy, plots=False,
                )
                summary = summarize(result, anchor_day=run.anchor_day)
                hit = ppv_npv(streams[c], dataset.timestamps, dataset.labels, gamma)
                return {
                    "symbol": s.symbol, "gamma": gamma, "c": c,
                    "net_return": summary.compounded_return,
                    "return_std": summary.return_std,
                    "ppv": hit.ppv, "npv": hit.npv,
                    "trade_count": summary.trade_count, "error": "",
                }
            except Exception as exc:  # grid point failure is recorded, not fatal
                log.warning("sweep %s gamma=%s C=%s failed: %s", s.symbol, gamma, c, exc)
                return {
                    "symbol": s.symbol, "gamma": gamma, "c": c,
                    "net_return": None, "return_std": None,
                    "ppv": None, "npv": None, "trade_count": None,
                    "error": str(exc).replace(",", ";").replace("\n", " "),
                }

        points = [(g, c) for c in c_choices for g in run.sweep_gammas]
        with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as pool:
            rows.extend(pool.map(run_point, points))

    rows.sort(
        key=lambda r: (
            r["error"] != "",
            -(r["net_return"] if r["net_return"] is not None else float("-inf")),
            r["symbol"], r["gamma"], r["c"] if r["c"] is not None else -1.0,
        )
    )
    def cell(v):
        return "" if v is None else (repr(v) if isinstance(v, float) else str(v))
    lines = ["symbol,gamma,c,net_return,return_std,ppv,npv,trade_count,error"]
    for r in rows:
        lines.append(
            f"{r['symbol']},{r['gamma']!r},{cell(r['c'])},{cell(r['net_return'])},"
            f"{cell(r['return_std'])},{cell(r['ppv'])},{cell(r['npv'])},"
            f"{cell(r['trade_count'])},{r['error']}"
        )
    ws.write("sweep.csv", "\n".join(lines) + "\n")
    log.info("sweep: %d grid points written", len(rows))


COMMANDS = {
    "ingest": cmd_ingest,
    "features": cmd_features,
    "backtest": cmd_backtest,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="candlewalk",
        description="Walk-forward trading experiments on hourly candles.",
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="TOML run config")
    parser.add_argument("--out", default=None, help="override the output directory")
    parser.add_argument(
        "--seed", type=int, default=None,
        help="override synthetic series seeds (seed + series index); synthetic data only",
    )
    parser.add_argument("--jobs", type=int, default=1, help="sweep parallelism")
    parser.add_argument("--quiet", action="store_true", help="suppress progress logging")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(message)s",
        stream=sys.stderr,
    )
    try:
        run = load_config(args.config)
        if args.out is not None:
            run = dataclasses.replace(run, out_dir=args.out)
        ws = Workspace(Path(run.out_dir))
        try:
            ws.write("config.toml", effective_config_toml(run))
            COMMANDS[args.command](run, ws, args)
        except Exception:
            ws.discard_written()
            raise
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
