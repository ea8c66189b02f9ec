"""Schedule calendar arithmetic, the retrain loop, and stream round-trips."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from candlewalk.errors import InsufficientHistoryError
from candlewalk.indicators import build_feature_matrix
from candlewalk.labeling import C1, C2, C3, assign_classes, build_labeled_dataset
from candlewalk.market_data import CandleSeries, compute_response
from candlewalk.synthetic import generate_planted_series
from candlewalk.timeutil import HOUR, parse_timestamp, to_datetime
from candlewalk.walkforward import (
    Epoch,
    export_prediction_stream,
    make_schedule,
    parse_prediction_stream,
    run_walkforward,
)

T = parse_timestamp  # shorthand for fixed instants in UTC


class TestMakeSchedule:
    def test_worked_example(self):
        sched = make_schedule(T("2017-01-05T00:00:00Z"), T("2018-01-05T00:00:00Z"))
        assert len(sched.epochs) == 3
        first = sched.epochs[0]
        assert first.train_start == T("2017-01-05T00:00:00Z")
        assert first.train_end == T("2017-10-05T00:00:00Z")
        assert first.predict_start == T("2017-10-05T00:00:00Z")
        assert first.predict_end == T("2017-11-05T00:00:00Z")
        assert sched.epochs[-1].predict_end == T("2018-01-05T00:00:00Z")

    def test_exactly_window_plus_one_month(self):
        sched = make_schedule(T("2017-01-05T00:00:00Z"), T("2017-11-05T00:00:00Z"))
        assert len(sched.epochs) == 1

    def test_too_short_is_an_error(self):
        with pytest.raises(InsufficientHistoryError):
            make_schedule(T("2017-01-05T00:00:00Z"), T("2017-08-05T00:00:00Z"))

    def test_unanchored_start_snaps_forward(self):
        sched = make_schedule(T("2017-01-10T00:00:00Z"), T("2018-01-05T00:00:00Z"))
        # start + 9 months = 2017-10-10, so the first anchor is 2017-11-05
        assert sched.epochs[0].predict_start == T("2017-11-05T00:00:00Z")
        assert sched.epochs[0].train_start == T("2017-02-05T00:00:00Z")

    def test_last_epoch_truncates_at_data_end(self):
        sched = make_schedule(T("2017-01-05T00:00:00Z"), T("2017-12-20T06:00:00Z"))
        assert sched.epochs[-1].predict_start == T("2017-12-05T00:00:00Z")
        assert sched.epochs[-1].predict_end == T("2017-12-20T06:00:00Z")

    def test_anchor_day_parameter(self):
        sched = make_schedule(
            T("2017-01-01T00:00:00Z"), T("2018-01-01T00:00:00Z"), anchor_day=1
        )
        assert sched.epochs[0].predict_start == T("2017-10-01T00:00:00Z")

    @given(
        st.integers(min_value=0, max_value=364 * 24),
        st.integers(min_value=11, max_value=30),
    )
    @settings(max_examples=50, deadline=None)
    def test_epochs_tile_the_prediction_range(self, start_hours, span_months):
        # 11 * 30 days always covers 9 calendar months plus the anchor snap
        # plus a sliver of prediction range; 10 can leave no room to predict
        start = T("2017-01-01T00:00:00Z") + start_hours * HOUR
        end = start + span_months * 30 * 24 * HOUR
        sched = make_schedule(start, end)
        for a, b in zip(sched.epochs, sched.epochs[1:]):
            assert a.predict_end == b.predict_start
        assert sched.epochs[-1].predict_end == end
        for e in sched.epochs:
            assert e.train_end == e.predict_start
            assert to_datetime(e.predict_start).day == 5
            # training window spans exactly 9 calendar months
            ts, te = to_datetime(e.train_start), to_datetime(e.train_end)
            assert (te.year * 12 + te.month) - (ts.year * 12 + ts.month) == 9
        assert sched.epochs[0].predict_start >= start

    def test_epoch_boundary_validation(self):
        with pytest.raises(ValueError):
            Epoch(100, 50, 50, 200)
        with pytest.raises(ValueError):
            Epoch(0, 50, 60, 200)


ANCHOR_START = T("2017-01-05T00:00:00Z")


def series_from_responses(responses, start=ANCHOR_START, start_price=8000.0):
    """Integrate planted responses into prices and attach truthful signals."""
    responses = np.asarray(responses, dtype=float)
    logs = math.log(start_price) * np.concatenate([[1.0], np.cumprod(1.0 + responses)])
    closes = np.exp(logs)
    n = len(closes)
    labels = assign_classes(responses)
    signal_up = np.zeros(n)
    signal_down = np.zeros(n)
    signal_up[:-1][labels == C1] = 1.0
    signal_down[:-1][labels == C2] = 1.0
    ts = start + HOUR * np.arange(n, dtype=np.int64)
    return CandleSeries(
        "SYN", ts, closes, closes, closes, closes, np.ones(n),
        extra_columns={"signal_up": signal_up, "signal_down": signal_down},
    )


def stream_of(series, gamma=0.0):
    feats = build_feature_matrix(series, selection=("signal_up", "signal_down"))
    dataset = build_labeled_dataset(feats, compute_response(series))
    sched = make_schedule(int(series.timestamps[0]), int(series.timestamps[-1]) + HOUR)
    return run_walkforward(feats, dataset, sched, gamma=gamma), sched


class TestRunWalkforward:
    def test_planted_signal_accuracy_per_epoch(self):
        planted = generate_planted_series(24 * 30 * 13, seed=101, start=ANCHOR_START,
                                          noise_rate=0.05)
        stream, sched = stream_of(planted.series)
        start = int(planted.series.timestamps[0])
        for result in stream.epochs:
            assert not result.skipped
            mask = (stream.timestamps >= result.epoch.predict_start) & (
                stream.timestamps < result.epoch.predict_end
            )
            idx = ((stream.timestamps[mask] - start) // HOUR).astype(int)
            scorable = idx < len(planted.true_labels)
            truth = planted.true_labels[idx[scorable]]
            predicted = stream.argmax[mask][scorable]
            assert np.mean(predicted == truth) >= 0.90

    def test_skipped_epoch_emits_inert_bars(self):
        # first training window holds c1 and c3 but never c2
        n1 = 24 * 280  # flat-plus-up months through 2017-10-05
        r = np.zeros(24 * 330)
        r[50:n1:100] = 0.01
        r[n1::3] = 0.01
        r[n1 + 1 :: 3] = -0.0099
        series = series_from_responses(r)
        stream, sched = stream_of(series)
        first = stream.epochs[0]
        assert first.skipped
        assert "c2" in first.reason
        assert not any(e.skipped for e in stream.epochs[1:])
        mask = stream.timestamps < first.epoch.predict_end
        assert mask.any()
        assert not stream.actionable[mask].any()
        assert not stream.model_available[mask].any()
        assert np.all(stream.scores[mask] == 0.0)
        assert not stream.actionable_at(0.0)[mask].any()
        later = stream.model_available[~mask]
        assert later.all()

    def test_stream_covers_every_feature_bar_in_range(self):
        planted = generate_planted_series(24 * 310, seed=5, start=ANCHOR_START)
        stream, sched = stream_of(planted.series)
        feats = build_feature_matrix(planted.series, selection=("signal_up", "signal_down"))
        in_range = (feats.timestamps >= sched.predict_start) & (
            feats.timestamps < sched.predict_end
        )
        assert np.array_equal(stream.timestamps, feats.timestamps[in_range])
        assert np.all(np.diff(stream.timestamps) == HOUR)

    def test_no_lookahead_metadata(self):
        planted = generate_planted_series(24 * 310, seed=6, start=ANCHOR_START)
        stream, _ = stream_of(planted.series)
        for result in stream.epochs:
            if result.model is None:
                continue
            assert result.model.train_end == result.epoch.predict_start
            bars = stream.timestamps[
                (stream.timestamps >= result.epoch.predict_start)
                & (stream.timestamps < result.epoch.predict_end)
            ]
            assert np.all(bars >= result.model.train_end)

    def test_deterministic_reruns(self):
        planted = generate_planted_series(24 * 310, seed=7, start=ANCHOR_START)
        a, _ = stream_of(planted.series)
        b, _ = stream_of(planted.series)
        assert export_prediction_stream(a) == export_prediction_stream(b)

    def test_gamma_applied_at_run_time(self):
        planted = generate_planted_series(24 * 310, seed=8, start=ANCHOR_START)
        loose, _ = stream_of(planted.series, gamma=0.0)
        tight, _ = stream_of(planted.series, gamma=0.8)
        assert np.array_equal(loose.scores, tight.scores)
        assert tight.actionable.sum() <= loose.actionable.sum()
        assert np.array_equal(tight.actionable, loose.actionable_at(0.8))


class TestStreamSerialization:
    def test_round_trip(self):
        planted = generate_planted_series(24 * 310, seed=9, start=ANCHOR_START)
        stream, _ = stream_of(planted.series, gamma=0.25)
        text = export_prediction_stream(stream)
        back = parse_prediction_stream(text, gamma=0.25)
        assert np.array_equal(back.timestamps, stream.timestamps)
        assert np.array_equal(back.scores, stream.scores)
        assert np.array_equal(back.argmax, stream.argmax)
        assert np.array_equal(back.actionable, stream.actionable)
        assert np.array_equal(back.model_available, stream.model_available)
        assert export_prediction_stream(back) == text

    def test_zero_score_bars_parse_as_model_less(self):
        text = (
            "timestamp,d_c1,d_c2,d_c3,argmax,actionable\n"
            "2017-10-05T00:00:00Z,0.0,0.0,0.0,c1,false\n"
            "2017-10-05T01:00:00Z,0.5,-0.1,0.2,c1,true\n"
        )
        stream = parse_prediction_stream(text)
        assert list(stream.model_available) == [False, True]
        assert list(stream.actionable_at(0.0)) == [False, True]

    def test_rejects_malformed_input(self):
        with pytest.raises(ValueError, match="header"):
            parse_prediction_stream("time,stuff\n")
        base = "timestamp,d_c1,d_c2,d_c3,argmax,actionable\n"
        with pytest.raises(ValueError, match="6 fields"):
            parse_prediction_stream(base + "2017-10-05T00:00:00Z,1,2,3\n")
        with pytest.raises(ValueError, match="bad class"):
            parse_prediction_stream(base + "2017-10-05T00:00:00Z,1.0,2.0,3.0,c9,true\n")
        with pytest.raises(ValueError, match="actionable flag"):
            parse_prediction_stream(base + "2017-10-05T00:00:00Z,1.0,2.0,3.0,c1,yes\n")
