"""One-vs-rest linear SVMs with squared hinge loss, trained in the primal.

The binary objective is F(w, w0) = 0.5*||w||^2 + C * sum_i s_i * max(0, 1 - t_i*y_i)^2
with y_i = w.x_i + w0, per-sample weights s_i, and targets t_i in {+1,-1}.
F is convex, continuously differentiable, and piecewise quadratic, so a
deterministic full-batch first-order method suffices: nonlinear conjugate
gradient (Polak-Ribiere+ with periodic restarts) where each 1-D minimization
is solved exactly by scanning the breakpoints at which rows enter or leave
the hinge-active set. Exact descent steps keep the objective monotone
non-increasing; a halving backtracking loop guards the update against float
rounding. No randomness anywhere; initialization is w = 0, w0 = 0.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import FeatureError
from .labeling import CLASS_NAMES, NUM_CLASSES, LabeledDataset, class_weights

log = logging.getLogger(__name__)

GRAD_TOL = 1e-6
MAX_ITERATIONS = 20000
REGULARIZATION_GRID = (0.01, 0.1, 1.0, 10.0)


@dataclass(frozen=True)
class Standardizer:
    """Per-feature training mean/std; zero-variance features are dropped."""

    feature_names: tuple[str, ...]
    kept: tuple[int, ...]
    means: np.ndarray
    stds: np.ndarray
    dropped: tuple[str, ...]

    def apply(self, rows: np.ndarray) -> np.ndarray:
        rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        if rows.shape[1] != len(self.feature_names):
            raise FeatureError(
                f"expected {len(self.feature_names)} features, got {rows.shape[1]}"
            )
        return (rows[:, self.kept] - self.means) / self.stds


def fit_standardizer(rows: np.ndarray, feature_names: tuple[str, ...] | None = None) -> Standardizer:
    """Estimate population mean/std per column; constant columns are dropped."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or len(rows) < 2:
        raise ValueError("standardizer needs at least 2 rows")
    if feature_names is None:
        feature_names = tuple(f"f{i}" for i in range(rows.shape[1]))
    if len(feature_names) != rows.shape[1]:
        raise ValueError("feature name count does not match column count")
    means = rows.mean(axis=0)
    stds = rows.std(axis=0)  # population convention
    keep = stds > 0
    dropped = tuple(str(name) for name, k in zip(feature_names, keep) if not k)
    if dropped:
        log.warning("dropping zero-variance features: %s", ", ".join(dropped))
    if not keep.any():
        raise FeatureError("every feature is constant over the training window")
    return Standardizer(
        feature_names=tuple(feature_names),
        kept=tuple(int(i) for i in np.nonzero(keep)[0]),
        means=means[keep],
        stds=stds[keep],
        dropped=dropped,
    )


@dataclass(frozen=True)
class BinarySvm:
    """A trained machine plus solver diagnostics."""

    w: np.ndarray
    w0: float
    C: float
    converged: bool
    grad_norm: float
    iterations: int

    def decision(self, standardized_rows: np.ndarray) -> np.ndarray:
        return np.atleast_2d(standardized_rows) @ self.w + self.w0


def svm_objective(w: np.ndarray, w0: float, X: np.ndarray, t: np.ndarray,
                  s: np.ndarray, C: float) -> float:
    margins = np.maximum(0.0, 1.0 - t * (X @ w + w0))
    return 0.5 * float(w @ w) + C * float(s @ (margins**2))


def svm_gradient(w: np.ndarray, w0: float, X: np.ndarray, t: np.ndarray,
                 s: np.ndarray, C: float) -> tuple[np.ndarray, float]:
    margins = np.maximum(0.0, 1.0 - t * (X @ w + w0))
    coef = s * margins * t  # only violated rows contribute (margin 0 elsewhere)
    grad_w = w - 2.0 * C * (X.T @ coef)
    grad_w0 = -2.0 * C * float(coef.sum())
    return grad_w, grad_w0


def _exact_line_minimum(w, dw, margins, u, s, C) -> float:
    """Minimize F along w + eta*dw for eta >= 0 by scanning hinge breakpoints.

    Along the ray, row i's margin is margins[i] - eta*u[i], so F restricted to
    the line is convex piecewise quadratic with breakpoints at margins/u. The
    derivative is phi'(eta) = dw.w + eta*||dw||^2 - 2C*(B - eta*A) with
    A = sum_active s*u^2 and B = sum_active s*u*margin; sweep the breakpoints
    in order, updating A and B as rows enter or leave, until the segment
    containing phi' = 0 is found.
    """
    dww = float(dw[:-1] @ w[:-1])  # regularizer excludes the bias coordinate
    dwsq = float(dw[:-1] @ dw[:-1])

    moving = u != 0.0
    um, mm, sm = u[moving], margins[moving], s[moving]
    # active right of eta=0: positive margin, or a boundary row being pushed in
    start_active = (mm > 0) | ((mm == 0) & (um < 0))
    A = float(sm[start_active] @ (um[start_active] ** 2))
    B = float(sm[start_active] @ (um[start_active] * mm[start_active]))

    leaving = (um > 0) & (mm > 0)
    entering = (um < 0) & (mm < 0)
    events = np.concatenate([mm[leaving] / um[leaving], mm[entering] / um[entering]])
    signs = np.concatenate([-np.ones(int(leaving.sum())), np.ones(int(entering.sum()))])
    d_a = signs * np.concatenate([sm[leaving] * um[leaving] ** 2,
                                  sm[entering] * um[entering] ** 2])
    d_b = signs * np.concatenate([sm[leaving] * um[leaving] * mm[leaving],
                                  sm[entering] * um[entering] * mm[entering]])
    order = np.argsort(events, kind="stable")
    events, d_a, d_b = events[order], d_a[order], d_b[order]

    lo = 0.0
    for k in range(len(events) + 1):
        hi = events[k] if k < len(events) else np.inf
        denom = dwsq + 2.0 * C * A
        if denom > 0:
            root = (2.0 * C * B - dww) / denom
            if lo <= root < hi:
                return max(root, 0.0)
        elif dww - 2.0 * C * B >= 0:
            return lo  # flat or rising segment: stop at its left edge
        if k < len(events):
            A += d_a[k]
            B += d_b[k]
            lo = hi
    return lo if np.isfinite(lo) else 0.0


def train_binary(
    rows: np.ndarray,
    targets: np.ndarray,
    sample_weights: np.ndarray,
    C: float,
    max_iterations: int = MAX_ITERATIONS,
    objective_trace: list | None = None,
) -> BinarySvm:
    """Minimize the weighted squared-hinge objective from the zero start.

    Stops when ||grad|| <= 1e-6 * (1 + ||w||), when the objective sits at its
    floating-point floor for a full restart cycle (descent is monotone under
    exact line search, so a cycle with zero decrease includes a steepest-descent
    step that also gained nothing), or at the iteration cap. Only the cap is
    flagged converged=False. One-sided target sets are tolerated (the objective
    stays well defined).
    """
    X = np.asarray(rows, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    s = np.asarray(sample_weights, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(t) or len(t) != len(s):
        raise ValueError("rows, targets, and weights must align")
    if not np.all(np.isin(t, (-1.0, 1.0))):
        raise ValueError("targets must be +1/-1")
    if np.any(s <= 0):
        raise ValueError("sample weights must be positive")
    if C <= 0:
        raise ValueError("C must be positive")

    d = X.shape[1]
    x = np.zeros(d + 1)  # stacked (w, w0)
    f = svm_objective(x[:-1], x[-1], X, t, s, C)
    if objective_trace is not None:
        objective_trace.append(f)

    g_prev = None
    direction = None
    iterations = 0
    grad_norm = np.inf
    converged = False
    stagnant = 0
    for iterations in range(1, max_iterations + 1):
        gw, g0 = svm_gradient(x[:-1], x[-1], X, t, s, C)
        g = np.append(gw, g0)
        grad_norm = float(np.linalg.norm(g))
        if grad_norm <= GRAD_TOL * (1.0 + float(np.linalg.norm(x[:-1]))):
            converged = True
            iterations -= 1
            break

        # Polak-Ribiere+ direction, restarted periodically and on non-descent
        if g_prev is None or iterations % (d + 2) == 0:
            direction = -g
        else:
            beta = max(0.0, float(g @ (g - g_prev)) / float(g_prev @ g_prev))
            direction = -g + beta * direction
            if float(direction @ g) >= 0.0:
                direction = -g
        g_prev = g

        margins = 1.0 - t * (X @ x[:-1] + x[-1])
        u = t * (X @ direction[:-1] + direction[-1])
        eta = _exact_line_minimum(x, direction, margins, u, s, C)
        if eta <= 0.0:
            break

        # exact in real arithmetic; halve against float rounding just in case
        stalled = True
        for _ in range(60):
            cand = x + eta * direction
            f_new = svm_objective(cand[:-1], cand[-1], X, t, s, C)
            if f_new <= f:
                stalled = False
                break
            eta *= 0.5
        if stalled:
            break
        assert f_new <= f
        stagnant = stagnant + 1 if f_new == f else 0
        x, f = cand, f_new
        if objective_trace is not None:
            objective_trace.append(f)
        if stagnant >= d + 2:
            converged = True
            break
    else:
        iterations = max_iterations

    if not converged:
        log.warning("solver stopped at %d iterations, grad norm %.3e", iterations, grad_norm)
    return BinarySvm(w=x[:-1], w0=float(x[-1]), C=float(C), converged=converged,
                     grad_norm=grad_norm, iterations=iterations)


@dataclass(frozen=True)
class SvmModel:
    """Shared standardizer plus one binary machine per class, one-vs-rest."""

    standardizer: Standardizer
    machines: tuple[BinarySvm, BinarySvm, BinarySvm]
    train_start: int
    train_end: int
    row_count: int
    class_counts: tuple[int, int, int]


def train_multiclass(
    dataset: LabeledDataset,
    C: float,
    train_start: int | None = None,
    train_end: int | None = None,
    max_iterations: int = MAX_ITERATIONS,
) -> SvmModel:
    """Fit the standardizer once, then one machine per class.

    Every machine weighs row i by the inverse-frequency weight of the row's
    true class, so rare classes pull their full share in all three problems.
    """
    weights = class_weights(dataset.class_counts)
    standardizer = fit_standardizer(dataset.rows, dataset.feature_names)
    X = standardizer.apply(dataset.rows)
    s = weights[dataset.labels]
    machines = []
    for k in range(NUM_CLASSES):
        t = np.where(dataset.labels == k, 1.0, -1.0)
        machines.append(train_binary(X, t, s, C, max_iterations=max_iterations))
    return SvmModel(
        standardizer=standardizer,
        machines=tuple(machines),
        train_start=int(train_start if train_start is not None else dataset.timestamps[0]),
        train_end=int(train_end if train_end is not None else dataset.timestamps[-1]),
        row_count=len(dataset),
        class_counts=dataset.class_counts,
    )


def decision_scores(model: SvmModel, rows: np.ndarray) -> np.ndarray:
    """Per-class decision values, shape (n, 3); raw y_k(x), not probabilities."""
    X = model.standardizer.apply(rows)
    return np.column_stack([m.decision(X) for m in model.machines])


@dataclass(frozen=True)
class Prediction:
    timestamp: int
    scores: tuple[float, float, float]
    argmax: int
    actionable: bool
    gamma: float


def predict_with_gamma(scores, gamma: float, timestamp: int = 0) -> Prediction:
    """Argmax class with first-index tie-break; c1/c2 actionable iff score >= gamma."""
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    s = np.asarray(scores, dtype=np.float64)
    if s.shape != (NUM_CLASSES,):
        raise ValueError(f"expected {NUM_CLASSES} scores")
    k = int(np.argmax(s))  # ties resolve to the lowest class index
    actionable = k != 2 and s[k] >= gamma
    return Prediction(
        timestamp=int(timestamp),
        scores=(float(s[0]), float(s[1]), float(s[2])),
        argmax=k,
        actionable=bool(actionable),
        gamma=float(gamma),
    )


def balanced_accuracy(true_labels: np.ndarray, predicted: np.ndarray) -> float:
    """Mean per-class recall over the classes present in true_labels."""
    recalls = []
    for k in range(NUM_CLASSES):
        mask = true_labels == k
        if mask.any():
            recalls.append(float(np.mean(predicted[mask] == k)))
    return float(np.mean(recalls))


@dataclass(frozen=True)
class RegularizationReport:
    chosen: float
    scores: tuple[tuple[float, float], ...]  # (C, balanced accuracy); -1 marks infeasible
    fallback: bool


def select_regularization(
    dataset: LabeledDataset,
    grid: tuple[float, ...] = REGULARIZATION_GRID,
    holdout_fraction: float = 0.2,
    max_iterations: int = MAX_ITERATIONS,
) -> RegularizationReport:
    """Pick C by balanced accuracy on the time-ordered tail of the window.

    The first (1 - holdout_fraction) of rows train candidate models; the rest
    validate. Ties keep the earliest grid entry. If no candidate is feasible
    (the sub-window lost a class, or too few rows), fall back to C = 1.0.
    """
    n = len(dataset)
    split = int(round(n * (1.0 - holdout_fraction)))
    infeasible = RegularizationReport(1.0, tuple((C, -1.0) for C in grid), True)
    if split < 2 or split >= n:
        return infeasible
    head_counts = np.bincount(dataset.labels[:split], minlength=NUM_CLASSES)
    if np.any(head_counts < 1):
        return infeasible

    head = LabeledDataset(
        timestamps=dataset.timestamps[:split],
        feature_names=dataset.feature_names,
        rows=dataset.rows[:split],
        labels=dataset.labels[:split],
        responses=dataset.responses[:split],
        class_counts=tuple(int(c) for c in head_counts),
    )
    tail_rows = dataset.rows[split:]
    tail_labels = dataset.labels[split:]

    best_C, best_score = None, -np.inf
    scores = []
    for C in grid:
        model = train_multiclass(head, C, max_iterations=max_iterations)
        predicted = np.argmax(decision_scores(model, tail_rows), axis=1)
        score = balanced_accuracy(tail_labels, predicted)
        scores.append((float(C), score))
        if score > best_score:
            best_C, best_score = float(C), score
    return RegularizationReport(chosen=best_C, scores=tuple(scores), fallback=False)


SNAPSHOT_VERSION = 1


def model_to_json(model: SvmModel) -> str:
    """Versioned snapshot; floats serialize via repr so loading is exact."""
    doc = {
        "version": SNAPSHOT_VERSION,
        "standardizer": {
            "feature_names": list(model.standardizer.feature_names),
            "kept": list(model.standardizer.kept),
            "means": [float(x) for x in model.standardizer.means],
            "stds": [float(x) for x in model.standardizer.stds],
            "dropped": list(model.standardizer.dropped),
        },
        "machines": [
            {
                "class": CLASS_NAMES[k],
                "w": [float(x) for x in m.w],
                "w0": m.w0,
                "C": m.C,
                "converged": m.converged,
                "grad_norm": m.grad_norm,
                "iterations": m.iterations,
            }
            for k, m in enumerate(model.machines)
        ],
        "window": {
            "train_start": model.train_start,
            "train_end": model.train_end,
            "row_count": model.row_count,
            "class_counts": list(model.class_counts),
        },
    }
    return json.dumps(doc, indent=2) + "\n"


def model_from_json(text: str) -> SvmModel:
    doc = json.loads(text)
    if doc.get("version") != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported model snapshot version {doc.get('version')!r}")
    std = doc["standardizer"]
    standardizer = Standardizer(
        feature_names=tuple(std["feature_names"]),
        kept=tuple(std["kept"]),
        means=np.array(std["means"], dtype=np.float64),
        stds=np.array(std["stds"], dtype=np.float64),
        dropped=tuple(std["dropped"]),
    )
    machines = tuple(
        BinarySvm(
            w=np.array(m["w"], dtype=np.float64),
            w0=float(m["w0"]),
            C=float(m["C"]),
            converged=bool(m["converged"]),
            grad_norm=float(m["grad_norm"]),
            iterations=int(m["iterations"]),
        )
        for m in doc["machines"]
    )
    window = doc["window"]
    return SvmModel(
        standardizer=standardizer,
        machines=machines,
        train_start=int(window["train_start"]),
        train_end=int(window["train_end"]),
        row_count=int(window["row_count"]),
        class_counts=tuple(int(c) for c in window["class_counts"]),
    )
