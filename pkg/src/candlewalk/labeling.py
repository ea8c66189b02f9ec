"""Three-class response labeling, inverse-frequency weights, dataset assembly.

Classes: c1 "up" (r >= theta), c2 "down" (r <= -theta), c3 "same" (otherwise),
boundaries inclusive. Labels are small ints so datasets stay numpy-friendly.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import AlignmentError, InsufficientHistoryError, MissingClassError
from .indicators import FeatureMatrix
from .market_data import ReturnSeries
from .timeutil import HOUR, format_iso

C1, C2, C3 = 0, 1, 2
CLASS_NAMES = ("c1", "c2", "c3")
NUM_CLASSES = 3

DEFAULT_THRESHOLD = 0.005


def assign_class(r: float, threshold: float = DEFAULT_THRESHOLD) -> int:
    """Label one response value; boundaries land in the extreme classes."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    if not math.isfinite(r):
        raise ValueError(f"non-finite response {r!r}")
    if r >= threshold:
        return C1
    if r <= -threshold:
        return C2
    return C3


def assign_classes(responses: np.ndarray, threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
    """Vectorized assign_class over an array of finite responses."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    responses = np.asarray(responses, dtype=np.float64)
    if not np.all(np.isfinite(responses)):
        i = int(np.nonzero(~np.isfinite(responses))[0][0])
        raise ValueError(f"non-finite response at position {i}")
    labels = np.full(len(responses), C3, dtype=np.int8)
    labels[responses >= threshold] = C1
    labels[responses <= -threshold] = C2
    return labels


@dataclass(frozen=True)
class LabeledDataset:
    """Feature rows at bar t paired with the class of the response over (t, t+1]."""

    timestamps: np.ndarray
    feature_names: tuple[str, ...]
    rows: np.ndarray
    labels: np.ndarray
    responses: np.ndarray
    class_counts: tuple[int, int, int]

    def __post_init__(self):
        n = len(self.timestamps)
        if not (len(self.rows) == len(self.labels) == len(self.responses) == n):
            raise ValueError("misaligned dataset blocks")
        if sum(self.class_counts) != n:
            raise ValueError("class_counts do not sum to the row count")

    def __len__(self) -> int:
        return len(self.timestamps)


def build_labeled_dataset(
    features: FeatureMatrix,
    responses: ReturnSeries,
    threshold: float = DEFAULT_THRESHOLD,
) -> LabeledDataset:
    """Pair each feature row with the next hour's response class.

    Trailing feature rows with no next-hour response yet are dropped; a missing
    response anywhere else means the inputs are not from the same series.
    """
    targets = features.timestamps + HOUR
    pos = np.searchsorted(responses.timestamps, targets)
    in_range = pos < len(responses.timestamps)
    found = np.zeros(len(targets), dtype=bool)
    found[in_range] = responses.timestamps[pos[in_range]] == targets[in_range]

    last_known = responses.timestamps[-1] if len(responses.timestamps) else -np.inf
    interior_missing = ~found & (targets <= last_known)
    if interior_missing.any():
        t = int(features.timestamps[np.nonzero(interior_missing)[0][0]])
        raise AlignmentError(
            f"feature row at {format_iso(t)} has no response one hour later; "
            "features and responses disagree about the bar grid"
        )
    if not found.any():
        raise InsufficientHistoryError("no feature row has a next-hour response")

    keep = np.nonzero(found)[0]
    r = responses.values[pos[keep]]
    labels = assign_classes(r, threshold)
    counts = np.bincount(labels, minlength=NUM_CLASSES)
    return LabeledDataset(
        timestamps=features.timestamps[keep].copy(),
        feature_names=features.feature_names,
        rows=features.rows[keep].copy(),
        labels=labels,
        responses=r.copy(),
        class_counts=(int(counts[0]), int(counts[1]), int(counts[2])),
    )


def class_weights(class_counts) -> np.ndarray:
    """Inverse-frequency weights w_k = N/(K*N_k); balanced data gives unit weights."""
    counts = np.asarray(class_counts, dtype=np.int64)
    if len(counts) != NUM_CLASSES:
        raise ValueError(f"expected {NUM_CLASSES} class counts")
    if np.any(counts < 1):
        missing = CLASS_NAMES[int(np.nonzero(counts < 1)[0][0])]
        raise MissingClassError(
            f"class {missing} has no examples; use a longer training window"
        )
    total = int(counts.sum())
    return total / (NUM_CLASSES * counts.astype(np.float64))


def rolling_class_proportions(labels: np.ndarray, window_bars: int = 6480) -> np.ndarray:
    """Trailing per-class label fractions, one row per bar from window_bars-1 on.

    The default window approximates 9 months of hourly bars (270 days).
    Rows before the first full window are NaN; each defined row sums to 1.
    """
    labels = np.asarray(labels)
    if window_bars < 1:
        raise ValueError("window must be >= 1")
    if len(labels) < window_bars:
        raise InsufficientHistoryError(
            f"{len(labels)} labels cannot fill a {window_bars}-bar window"
        )
    onehot = np.zeros((len(labels), NUM_CLASSES))
    onehot[np.arange(len(labels)), labels] = 1.0
    sums = np.cumsum(onehot, axis=0)
    out = np.full((len(labels), NUM_CLASSES), np.nan)
    out[window_bars - 1] = sums[window_bars - 1] / window_bars
    out[window_bars:] = (sums[window_bars:] - sums[:-window_bars]) / window_bars
    return out


def export_labeled_dataset(dataset: LabeledDataset) -> str:
    """CSV: timestamp, class name, raw response, then the feature columns."""
    out = io.StringIO()
    out.write("timestamp,label,response," + ",".join(dataset.feature_names) + "\n")
    for i in range(len(dataset)):
        row = ",".join(repr(float(x)) for x in dataset.rows[i])
        out.write(
            f"{format_iso(int(dataset.timestamps[i]))},{CLASS_NAMES[dataset.labels[i]]},"
            f"{repr(float(dataset.responses[i]))},{row}\n"
        )
    return out.getvalue()
