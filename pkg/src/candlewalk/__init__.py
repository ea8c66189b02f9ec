"""Walk-forward trading experiments on hourly candles.

The pipeline: normalize OHLCV candles, derive momentum features, label hourly
returns into up/down/flat classes, train one-vs-rest linear models on a rolling
window, gate predictions by decision-score confidence, and run a long-only
all-in strategy over the resulting stream. Everything downstream of the raw
candles is deterministic; reruns produce byte-identical artifacts.
"""

from .backtest import (
    BacktestResult,
    BacktestSummary,
    DEFAULT_FEE,
    MonthRow,
    PortfolioState,
    StrategyConfig,
    TradeRecord,
    run_backtest,
    summarize,
)
from .config import RunConfig, SeriesConfig, effective_config_toml, load_config
from .errors import (
    AlignmentError,
    CandleDataError,
    ConfigError,
    InsufficientHistoryError,
)
from .indicators import (
    DEFAULT_FEATURE_SET,
    FeatureMatrix,
    IndicatorConfig,
    build_feature_matrix,
)
from .labeling import (
    C1,
    C2,
    C3,
    CLASS_NAMES,
    DEFAULT_THRESHOLD,
    LabeledDataset,
    assign_classes,
    build_labeled_dataset,
)
from .market_data import (
    CandleFormat,
    CandleSeries,
    GapPolicy,
    compute_response,
    parse_candles,
    serialize_candles,
    validate_and_repair,
)
from .metrics import (
    ConfusionSummary,
    acf,
    activity_report,
    gamma_sweep,
    overall_accuracy,
    pacf,
    ppv_npv,
    spearman_correlation,
)
from .svm import (
    MAX_ITERATIONS,
    REGULARIZATION_GRID,
    SvmModel,
    predict_with_gamma,
    select_regularization,
    train_binary,
    train_multiclass,
)
from .synthetic import generate_planted_series, generate_random_walk
from .timeutil import HOUR, format_iso, parse_timestamp
from .walkforward import (
    PredictionStream,
    RetrainSchedule,
    make_schedule,
    run_walkforward,
)

__version__ = "0.1.0"

__all__ = [
    "AlignmentError",
    "BacktestResult",
    "BacktestSummary",
    "C1",
    "C2",
    "C3",
    "CLASS_NAMES",
    "CandleDataError",
    "CandleFormat",
    "CandleSeries",
    "ConfigError",
    "ConfusionSummary",
    "DEFAULT_FEATURE_SET",
    "DEFAULT_FEE",
    "DEFAULT_THRESHOLD",
    "FeatureMatrix",
    "GapPolicy",
    "HOUR",
    "IndicatorConfig",
    "InsufficientHistoryError",
    "LabeledDataset",
    "MAX_ITERATIONS",
    "MonthRow",
    "PortfolioState",
    "PredictionStream",
    "REGULARIZATION_GRID",
    "RetrainSchedule",
    "RunConfig",
    "SeriesConfig",
    "StrategyConfig",
    "SvmModel",
    "TradeRecord",
    "acf",
    "activity_report",
    "assign_classes",
    "build_feature_matrix",
    "build_labeled_dataset",
    "compute_response",
    "effective_config_toml",
    "format_iso",
    "gamma_sweep",
    "generate_planted_series",
    "generate_random_walk",
    "load_config",
    "make_schedule",
    "overall_accuracy",
    "pacf",
    "parse_candles",
    "parse_timestamp",
    "ppv_npv",
    "predict_with_gamma",
    "run_backtest",
    "run_walkforward",
    "select_regularization",
    "serialize_candles",
    "spearman_correlation",
    "summarize",
    "train_binary",
    "train_multiclass",
    "validate_and_repair",
]
