"""Rolling retrain schedule and the hourly walk-forward prediction loop.

Train on the trailing 9 calendar months, hold the model fixed for one month of
hourly 1-hour-ahead predictions, step forward, repeat. Month boundaries sit on
an anchor day (the 5th) at 00:00 UTC. Training rows are filtered by label
time, strictly before the prediction month, so no bar ever sees its own
future.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientHistoryError
from .indicators import FeatureMatrix
from .labeling import CLASS_NAMES, NUM_CLASSES, LabeledDataset
from .svm import (
    MAX_ITERATIONS,
    REGULARIZATION_GRID,
    RegularizationReport,
    SvmModel,
    decision_scores,
    select_regularization,
    train_multiclass,
)
from .timeutil import HOUR, format_iso, next_anchor, parse_timestamp, shift_months


@dataclass(frozen=True)
class Epoch:
    train_start: int
    train_end: int
    predict_start: int
    predict_end: int

    def __post_init__(self):
        if not (self.train_start < self.train_end == self.predict_start < self.predict_end):
            raise ValueError("epoch boundaries out of order")


@dataclass(frozen=True)
class RetrainSchedule:
    epochs: tuple[Epoch, ...]
    window_months: int
    retrain_months: int
    anchor_day: int

    @property
    def predict_start(self) -> int:
        return self.epochs[0].predict_start

    @property
    def predict_end(self) -> int:
        return self.epochs[-1].predict_end


def make_schedule(
    data_start: int,
    data_end: int,
    window_months: int = 9,
    retrain_months: int = 1,
    anchor_day: int = 5,
) -> RetrainSchedule:
    """Tile [first anchor >= data_start + window, data_end) with retrain epochs.

    Every epoch trains on the window_months before its prediction month and
    predicts retrain_months forward; the last epoch truncates at data_end.
    """
    if window_months < 1 or retrain_months < 1:
        raise ValueError("window and retrain period must be >= 1 month")
    if data_end <= data_start:
        raise ValueError("empty data range")
    first = next_anchor(shift_months(data_start, window_months), anchor_day)
    epochs = []
    predict_start = first
    while predict_start < data_end:
        predict_end = min(shift_months(predict_start, retrain_months), data_end)
        epochs.append(
            Epoch(
                train_start=shift_months(predict_start, -window_months),
                train_end=predict_start,
                predict_start=predict_start,
                predict_end=predict_end,
            )
        )
        predict_start = shift_months(predict_start, retrain_months)
    if not epochs:
        raise InsufficientHistoryError(
            f"data {format_iso(data_start)}..{format_iso(data_end)} cannot fit "
            f"a {window_months}-month training window plus a prediction month"
        )
    return RetrainSchedule(
        epochs=tuple(epochs),
        window_months=window_months,
        retrain_months=retrain_months,
        anchor_day=anchor_day,
    )


@dataclass(frozen=True)
class EpochResult:
    """One retrain cycle: the model (unless skipped) plus selection diagnostics."""

    epoch: Epoch
    skipped: bool
    reason: str
    train_rows: int
    regularization: RegularizationReport | None
    model: SvmModel | None


@dataclass(frozen=True)
class PredictionStream:
    """Hourly per-class decision scores plus the gamma gate, over all epochs.

    Bars from skipped epochs carry all-zero scores and model_available False;
    they are never actionable at any gamma.
    """

    timestamps: np.ndarray
    scores: np.ndarray  # (n, 3)
    argmax: np.ndarray  # int8 class codes
    actionable: np.ndarray  # bool, evaluated at self.gamma
    model_available: np.ndarray  # bool
    gamma: float
    epochs: tuple[EpochResult, ...] = ()

    def __len__(self) -> int:
        return len(self.timestamps)

    def actionable_at(self, gamma: float) -> np.ndarray:
        """Recompute the gamma gate from stored scores; skipped bars stay out."""
        if gamma < 0:
            raise ValueError("gamma must be >= 0")
        best = self.scores[np.arange(len(self)), self.argmax]
        return self.model_available & (self.argmax != 2) & (best >= gamma)


def run_walkforward(
    features: FeatureMatrix,
    dataset: LabeledDataset,
    schedule: RetrainSchedule,
    gamma: float,
    regularization_grid: tuple[float, ...] = REGULARIZATION_GRID,
    max_iterations: int = MAX_ITERATIONS,
) -> PredictionStream:
    """Train per epoch and score every feature bar in its prediction month.

    Epochs whose training window misses a class (or holds fewer than 2 rows)
    are skipped: their bars emit zero scores and are never actionable, and the
    epoch record carries the reason.
    """
    all_ts: list[np.ndarray] = []
    all_scores: list[np.ndarray] = []
    available_flags: list[np.ndarray] = []
    results: list[EpochResult] = []

    for epoch in schedule.epochs:
        # label time is row time + 1h; require it strictly inside the window
        mask = (dataset.timestamps >= epoch.train_start) & (
            dataset.timestamps + HOUR < epoch.train_end
        )
        idx = np.nonzero(mask)[0]
        counts = np.bincount(dataset.labels[idx], minlength=NUM_CLASSES)
        predict_mask = (features.timestamps >= epoch.predict_start) & (
            features.timestamps < epoch.predict_end
        )
        bar_ts = features.timestamps[predict_mask]

        if len(idx) < 2 or np.any(counts < 1):
            missing = [CLASS_NAMES[k] for k in range(NUM_CLASSES) if counts[k] < 1]
            reason = (
                f"only {len(idx)} training rows" if len(idx) < 2
                else f"no {'/'.join(missing)} examples in the training window"
            )
            results.append(EpochResult(epoch, True, reason, int(len(idx)), None, None))
            all_ts.append(bar_ts)
            all_scores.append(np.zeros((len(bar_ts), NUM_CLASSES)))
            available_flags.append(np.zeros(len(bar_ts), dtype=bool))
            continue

        window = LabeledDataset(
            timestamps=dataset.timestamps[idx],
            feature_names=dataset.feature_names,
            rows=dataset.rows[idx],
            labels=dataset.labels[idx],
            responses=dataset.responses[idx],
            class_counts=(int(counts[0]), int(counts[1]), int(counts[2])),
        )
        assert int(window.timestamps[-1]) + HOUR < epoch.predict_start  # no lookahead
        selection = select_regularization(
            window, grid=regularization_grid, max_iterations=max_iterations
        )
        model = train_multiclass(
            window,
            selection.chosen,
            train_start=epoch.train_start,
            train_end=epoch.train_end,
            max_iterations=max_iterations,
        )
        results.append(EpochResult(epoch, False, "", len(window), selection, model))
        all_ts.append(bar_ts)
        if len(bar_ts):
            all_scores.append(decision_scores(model, features.rows[predict_mask]))
        else:
            all_scores.append(np.zeros((0, NUM_CLASSES)))
        available_flags.append(np.ones(len(bar_ts), dtype=bool))

    timestamps = np.concatenate(all_ts) if all_ts else np.array([], dtype=np.int64)
    scores = np.vstack(all_scores) if all_scores else np.zeros((0, NUM_CLASSES))
    model_available = (
        np.concatenate(available_flags) if available_flags else np.array([], dtype=bool)
    )
    argmax = scores.argmax(axis=1).astype(np.int8)  # ties resolve to the lowest class
    stream = PredictionStream(
        timestamps=timestamps,
        scores=scores,
        argmax=argmax,
        actionable=np.zeros(len(timestamps), dtype=bool),
        model_available=model_available,
        gamma=float(gamma),
        epochs=tuple(results),
    )
    return PredictionStream(
        timestamps=stream.timestamps,
        scores=stream.scores,
        argmax=stream.argmax,
        actionable=stream.actionable_at(gamma),
        model_available=stream.model_available,
        gamma=float(gamma),
        epochs=stream.epochs,
    )


def export_prediction_stream(stream: PredictionStream) -> str:
    """The six-column CSV contract consumed by the backtester and by plug-ins."""
    out = io.StringIO()
    out.write("timestamp,d_c1,d_c2,d_c3,argmax,actionable\n")
    for i in range(len(stream)):
        d = stream.scores[i]
        out.write(
            f"{format_iso(int(stream.timestamps[i]))},"
            f"{repr(float(d[0]))},{repr(float(d[1]))},{repr(float(d[2]))},"
            f"{CLASS_NAMES[stream.argmax[i]]},{str(bool(stream.actionable[i])).lower()}\n"
        )
    return out.getvalue()


def parse_prediction_stream(text: str, gamma: float = 0.0) -> PredictionStream:
    """Read the six-column CSV back into a stream.

    Epoch records do not survive the CSV; bars whose scores are exactly
    (0, 0, 0) are treated as model-less (the skipped-epoch sentinel), which a
    trained model cannot produce outside of measure-zero coincidences.
    """
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != "timestamp,d_c1,d_c2,d_c3,argmax,actionable":
        raise ValueError("bad prediction stream header")
    ts, scores, argmax, actionable = [], [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 6:
            raise ValueError(f"line {lineno}: expected 6 fields")
        ts.append(parse_timestamp(parts[0]))
        scores.append([float(parts[1]), float(parts[2]), float(parts[3])])
        if parts[4] not in CLASS_NAMES:
            raise ValueError(f"line {lineno}: bad class {parts[4]!r}")
        argmax.append(CLASS_NAMES.index(parts[4]))
        if parts[5] not in ("true", "false"):
            raise ValueError(f"line {lineno}: bad actionable flag {parts[5]!r}")
        actionable.append(parts[5] == "true")
    scores_arr = np.array(scores) if scores else np.zeros((0, NUM_CLASSES))
    return PredictionStream(
        timestamps=np.array(ts, dtype=np.int64),
        scores=scores_arr,
        argmax=np.array(argmax, dtype=np.int8),
        actionable=np.array(actionable, dtype=bool),
        model_available=~np.all(scores_arr == 0.0, axis=1),
        gamma=float(gamma),
        epochs=(),
    )
