"""Solver correctness, margin geometry, gamma gating, and snapshot round-trips."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize

from candlewalk.errors import FeatureError, MissingClassError
from candlewalk.labeling import C1, C2, C3, LabeledDataset
from candlewalk.svm import (
    REGULARIZATION_GRID,
    Prediction,
    balanced_accuracy,
    decision_scores,
    fit_standardizer,
    model_from_json,
    model_to_json,
    predict_with_gamma,
    select_regularization,
    svm_gradient,
    svm_objective,
    train_binary,
    train_multiclass,
)

BASE = 1514764800
HOUR = 3600


def make_dataset(rows, labels, names=None):
    rows = np.asarray(rows, dtype=float)
    labels = np.asarray(labels, dtype=np.int8)
    counts = np.bincount(labels, minlength=3)
    responses = np.choose(labels, [0.01, -0.01, 0.0])
    names = names or tuple(f"f{i}" for i in range(rows.shape[1]))
    return LabeledDataset(
        timestamps=BASE + HOUR * np.arange(len(rows), dtype=np.int64),
        feature_names=tuple(names),
        rows=rows,
        labels=labels,
        responses=responses,
        class_counts=(int(counts[0]), int(counts[1]), int(counts[2])),
    )


def blobs(rng, per_class=60, spread=0.25):
    """Three well-separated Gaussian clusters, one per class."""
    centers = np.array([[3.0, 0.0], [-3.0, 0.0], [0.0, 3.0]])
    rows, labels = [], []
    for k, c in enumerate(centers):
        rows.append(c + rng.normal(0.0, spread, size=(per_class, 2)))
        labels.extend([k] * per_class)
    rows = np.vstack(rows)
    order = rng.permutation(len(rows))
    return rows[order], np.array(labels, dtype=np.int8)[order]


class TestStandardizer:
    def test_two_point_column(self):
        std = fit_standardizer(np.array([[1.0], [3.0]]))
        assert std.means[0] == 2.0 and std.stds[0] == 1.0
        assert list(std.apply([[1.0], [3.0]]).ravel()) == [-1.0, 1.0]

    def test_constant_column_dropped_and_recorded(self):
        rows = np.array([[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]])
        std = fit_standardizer(rows, ("a", "const"))
        assert std.dropped == ("const",)
        assert std.kept == (0,)
        assert std.apply(rows).shape == (3, 1)

    def test_apply_unseen_row_is_direct_arithmetic(self):
        rng = np.random.default_rng(0)
        rows = rng.normal(size=(50, 4))
        std = fit_standardizer(rows)
        x = rng.normal(size=4)
        expected = (x - rows.mean(axis=0)) / rows.std(axis=0)
        assert np.allclose(std.apply(x).ravel(), expected, rtol=1e-14)

    def test_training_columns_become_standard(self):
        rng = np.random.default_rng(1)
        rows = rng.normal(3.0, 7.0, size=(100, 3))
        z = fit_standardizer(rows).apply(rows)
        assert np.allclose(z.mean(axis=0), 0.0, atol=1e-12)
        assert np.allclose(z.std(axis=0), 1.0, atol=1e-12)

    def test_all_constant_is_an_error(self):
        with pytest.raises(FeatureError, match="constant"):
            fit_standardizer(np.ones((5, 2)))

    def test_arity_mismatch(self):
        std = fit_standardizer(np.array([[1.0, 2.0], [3.0, 4.0]]))
        with pytest.raises(FeatureError, match="expected 2"):
            std.apply(np.ones((1, 3)))


class TestTrainBinary:
    def test_two_point_hard_margin(self):
        X = np.array([[1.0, 0.0], [-1.0, 0.0]])
        t = np.array([1.0, -1.0])
        model = train_binary(X, t, np.ones(2), C=1e4)
        assert model.converged
        assert model.w[0] == pytest.approx(1.0, abs=1e-2)
        assert model.w[1] == pytest.approx(0.0, abs=1e-2)
        assert model.w0 == pytest.approx(0.0, abs=1e-2)
        margins = t * model.decision(X)
        assert np.all(np.abs(margins - 1.0) < 1e-2)

    def test_one_sided_targets_improve_on_zero(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(15, 3))
        t = np.ones(15)
        s = np.ones(15)
        model = train_binary(X, t, s, C=1.0)
        f_opt = svm_objective(model.w, model.w0, X, t, s, 1.0)
        f_zero = svm_objective(np.zeros(3), 0.0, X, t, s, 1.0)
        assert f_opt <= f_zero
        assert np.all(model.decision(X) > 0)

    def test_objective_never_increases(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(40, 5))
        t = np.sign(rng.normal(size=40))
        trace = []
        train_binary(X, t, np.ones(40), C=10.0, objective_trace=trace)
        diffs = np.diff(trace)
        assert len(trace) > 2
        assert np.all(diffs <= 0.0)

    def test_gradient_matches_central_differences(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(25, 4))
        t = np.sign(rng.normal(size=25))
        s = rng.uniform(0.5, 2.0, size=25)
        C = 3.0
        h = 1e-6
        for _ in range(10):
            w = rng.normal(size=4)
            w0 = float(rng.normal())
            gw, g0 = svm_gradient(w, w0, X, t, s, C)
            analytic = np.append(gw, g0)
            numeric = np.empty(5)
            for j in range(4):
                e = np.zeros(4)
                e[j] = h
                numeric[j] = (svm_objective(w + e, w0, X, t, s, C)
                              - svm_objective(w - e, w0, X, t, s, C)) / (2 * h)
            numeric[4] = (svm_objective(w, w0 + h, X, t, s, C)
                          - svm_objective(w, w0 - h, X, t, s, C)) / (2 * h)
            rel = np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1.0)
            assert np.max(rel) < 1e-5

    def test_objective_matches_generic_convex_solver(self):
        rng = np.random.default_rng(5)
        for _ in range(3):
            X = rng.normal(size=(20, 2))
            t = np.sign(rng.normal(size=20))
            s = rng.uniform(0.5, 2.0, size=20)
            C = float(rng.choice([0.1, 1.0, 10.0]))
            model = train_binary(X, t, s, C)
            ours = svm_objective(model.w, model.w0, X, t, s, C)

            def f(z):
                return svm_objective(z[:2], z[2], X, t, s, C)

            ref = optimize.minimize(f, np.zeros(3), method="L-BFGS-B",
                                    options={"ftol": 1e-15, "gtol": 1e-12, "maxiter": 20000})
            rel = abs(ours - ref.fun) / max(abs(ref.fun), 1e-12)
            assert rel < 1e-4

    def test_kkt_near_hard_margin_on_separable_data(self):
        rng = np.random.default_rng(6)
        X = np.vstack([rng.normal([2.0, 0.0], 0.2, size=(20, 2)),
                       rng.normal([-2.0, 0.0], 0.2, size=(20, 2))])
        t = np.concatenate([np.ones(20), -np.ones(20)])
        model = train_binary(X, t, np.ones(40), C=1e5)
        assert np.min(t * model.decision(X)) >= 0.999

    def test_input_validation(self):
        X = np.ones((3, 2))
        with pytest.raises(ValueError, match=r"\+1/-1"):
            train_binary(X, np.array([1.0, 0.0, -1.0]), np.ones(3), 1.0)
        with pytest.raises(ValueError, match="positive"):
            train_binary(X, np.array([1.0, 1.0, -1.0]), np.array([1.0, 0.0, 1.0]), 1.0)
        with pytest.raises(ValueError, match="C must"):
            train_binary(X, np.array([1.0, 1.0, -1.0]), np.ones(3), 0.0)

    def test_iteration_cap_flags_model(self):
        rng = np.random.default_rng(7)
        X = rng.normal(size=(30, 3))
        t = np.sign(rng.normal(size=30))
        model = train_binary(X, t, np.ones(30), C=100.0, max_iterations=2)
        assert not model.converged
        assert model.grad_norm > 0


class TestTrainMulticlass:
    def test_separable_blobs_fit_the_window(self):
        rng = np.random.default_rng(8)
        rows, labels = blobs(rng)
        ds = make_dataset(rows, labels)
        model = train_multiclass(ds, C=1.0)
        predicted = np.argmax(decision_scores(model, rows), axis=1)
        assert np.mean(predicted == labels) >= 0.95

    def test_missing_class_is_an_error(self):
        rows = np.random.default_rng(9).normal(size=(10, 2))
        labels = np.array([C1] * 5 + [C2] * 5, dtype=np.int8)
        with pytest.raises(MissingClassError):
            train_multiclass(make_dataset(rows, labels), C=1.0)

    def test_row_permutation_leaves_model_unchanged(self):
        rng = np.random.default_rng(10)
        rows, labels = blobs(rng, per_class=30)
        ds = make_dataset(rows, labels)
        perm = rng.permutation(len(rows))
        ds_perm = make_dataset(rows[perm], labels[perm])
        a = train_multiclass(ds, C=1.0)
        b = train_multiclass(ds_perm, C=1.0)
        for ma, mb in zip(a.machines, b.machines):
            assert np.allclose(ma.w, mb.w, atol=1e-5)
            assert ma.w0 == pytest.approx(mb.w0, abs=1e-5)

    def test_window_metadata(self):
        rng = np.random.default_rng(11)
        rows, labels = blobs(rng, per_class=10)
        ds = make_dataset(rows, labels)
        model = train_multiclass(ds, C=1.0, train_start=123, train_end=456)
        assert (model.train_start, model.train_end) == (123, 456)
        assert model.row_count == 30
        assert model.class_counts == ds.class_counts


class TestDecisionScores:
    def test_two_point_machine_scores_affinely(self):
        # trained on (+-1, 0); the +1 machine is approximately y = x1
        X = np.array([[1.0, 0.0], [-1.0, 0.0]])
        machine = train_binary(X, np.array([1.0, -1.0]), np.ones(2), C=1e4)
        assert machine.decision([[2.0, 0.0]])[0] == pytest.approx(2.0, abs=1e-2)
        assert machine.decision([[1.0, 0.0]])[0] == pytest.approx(1.0, abs=1e-2)

    def test_scores_are_affine_in_the_query(self):
        rng = np.random.default_rng(12)
        rows, labels = blobs(rng, per_class=20)
        model = train_multiclass(make_dataset(rows, labels), C=1.0)
        x1, x2 = rng.normal(size=(2, 2))
        for alpha in (0.0, 0.3, 0.7, 1.0):
            mix = alpha * x1 + (1 - alpha) * x2
            expected = alpha * decision_scores(model, x1) + (1 - alpha) * decision_scores(model, x2)
            assert np.allclose(decision_scores(model, mix), expected, rtol=1e-9, atol=1e-9)

    def test_feature_scale_invariance_of_predictions(self):
        rng = np.random.default_rng(13)
        rows, labels = blobs(rng, per_class=25)
        queries = rng.normal(size=(10, 2)) * 2.0
        base = train_multiclass(make_dataset(rows, labels), C=1.0)
        scaled = train_multiclass(make_dataset(rows * 250.0, labels), C=1.0)
        s1 = decision_scores(base, queries)
        s2 = decision_scores(scaled, queries * 250.0)
        assert np.allclose(s1, s2, rtol=1e-6, atol=1e-8)
        assert np.array_equal(np.argmax(s1, axis=1), np.argmax(s2, axis=1))


class TestPredictWithGamma:
    def test_threshold_blocks_weak_argmax(self):
        p = predict_with_gamma((0.4, 0.1, 0.2), gamma=0.5)
        assert p.argmax == C1 and not p.actionable

    def test_naive_bayes_analogue_setting(self):
        p = predict_with_gamma((0.4, 0.1, 0.2), gamma=1.0 / 3.0)
        assert p.argmax == C1 and p.actionable

    def test_c3_is_never_actionable(self):
        p = predict_with_gamma((0.1, 0.2, 0.9), gamma=0.0)
        assert p.argmax == C3 and not p.actionable

    def test_tie_breaks_to_lower_class(self):
        assert predict_with_gamma((0.5, 0.5, 0.1), 0.0).argmax == C1
        assert predict_with_gamma((0.2, 0.5, 0.5), 0.0).argmax == C2
        assert predict_with_gamma((0.5, 0.5, 0.5), 0.0).argmax == C1

    def test_negative_gamma_rejected(self):
        with pytest.raises(ValueError):
            predict_with_gamma((0.1, 0.2, 0.3), -0.1)

    @given(
        st.tuples(*[st.floats(-2, 2, allow_nan=False) for _ in range(3)]),
        st.floats(0, 1.5),
        st.floats(0, 1.5),
    )
    @settings(max_examples=300, deadline=None)
    def test_actionable_set_shrinks_with_gamma(self, scores, g1, g2):
        lo, hi = min(g1, g2), max(g1, g2)
        p_lo = predict_with_gamma(scores, lo)
        p_hi = predict_with_gamma(scores, hi)
        assert p_lo.argmax == p_hi.argmax
        if p_hi.actionable:
            assert p_lo.actionable


class TestSelectRegularization:
    def test_picks_from_grid_on_separable_data(self):
        rng = np.random.default_rng(14)
        rows, labels = blobs(rng, per_class=50)
        report = select_regularization(make_dataset(rows, labels))
        assert not report.fallback
        assert report.chosen in REGULARIZATION_GRID
        assert len(report.scores) == len(REGULARIZATION_GRID)
        assert all(s >= 0 for _, s in report.scores)

    def test_ties_keep_the_earliest_grid_entry(self):
        rng = np.random.default_rng(15)
        rows, labels = blobs(rng, per_class=50, spread=0.05)
        report = select_regularization(make_dataset(rows, labels))
        best = max(s for _, s in report.scores)
        first_best = next(C for C, s in report.scores if s == best)
        assert report.chosen == first_best

    def test_falls_back_when_head_loses_a_class(self):
        # all c3 rows at the tail: the 80% head holds only c1/c2
        rows = np.random.default_rng(16).normal(size=(20, 2))
        labels = np.array([C1] * 8 + [C2] * 8 + [C3] * 4, dtype=np.int8)
        report = select_regularization(make_dataset(rows, labels))
        assert report.fallback and report.chosen == 1.0

    def test_balanced_accuracy_ignores_absent_classes(self):
        true = np.array([C1, C1, C2, C2], dtype=np.int8)
        predicted = np.array([C1, C2, C2, C2], dtype=np.int8)
        assert balanced_accuracy(true, predicted) == pytest.approx(0.75)


class TestSnapshot:
    def test_round_trip_is_exact(self):
        rng = np.random.default_rng(17)
        rows, labels = blobs(rng, per_class=15)
        rows = np.column_stack([rows, np.full(len(rows), 9.0)])  # constant col exercises drops
        model = train_multiclass(make_dataset(rows, labels, names=("a", "b", "flat")), C=0.1)
        text = model_to_json(model)
        back = model_from_json(text)
        assert model_to_json(back) == text
        queries = rng.normal(size=(5, 3))
        assert np.array_equal(decision_scores(model, queries), decision_scores(back, queries))
        assert back.standardizer.dropped == ("flat",)

    def test_version_gate(self):
        with pytest.raises(ValueError, match="version"):
            model_from_json('{"version": 99}')
