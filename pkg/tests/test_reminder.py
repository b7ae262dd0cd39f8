import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imumixer.errors import SchemaError, StreamOrderError
from imumixer.reminder import (
    NOTIFY,
    SILENT,
    ReminderEngine,
    ReminderState,
    load_trace,
    stream_classify,
    update_state,
    write_decisions,
)


class MeanModel:
    """Predicts 0-based class round(mean of channel 0) clipped to [0, 17]."""

    def predict(self, windows):
        return np.clip(np.rint(windows[:, :, 0].mean(axis=1)), 0, 17).astype(int)


def constant_trace(action_ids, samples_each):
    return np.concatenate([np.full((samples_each, 6), float(a - 1)) for a in action_ids])


class TestStreamClassify:
    @pytest.mark.parametrize("stride", [1, 64, 500])
    def test_single_window(self, stride):
        assert len(stream_classify(MeanModel(), np.zeros((128, 6)), stride)) == 1

    def test_256_samples_stride_64(self):
        out = stream_classify(MeanModel(), np.zeros((256, 6)), 64)
        assert [s for s, _ in out] == [0, 64, 128]

    def test_partial_tail_is_not_padded(self):
        out = stream_classify(MeanModel(), np.zeros((300, 6)), 64)
        assert [s for s, _ in out] == [0, 64, 128]

    def test_short_trace_warns(self):
        with pytest.warns(UserWarning):
            assert stream_classify(MeanModel(), np.zeros((100, 6)), 64) == []

    def test_actions_are_one_based(self):
        out = stream_classify(MeanModel(), constant_trace([4], 128), 64)
        assert out == [(0, 4)]

    def test_bad_shape(self):
        with pytest.raises(SchemaError):
            stream_classify(MeanModel(), np.zeros((200, 3)), 64)

    def test_class_2_then_class_9_with_trained_model(self, trained_es32):
        model, test = trained_es32
        a2 = next(s for s in test if s.action_id == 2)
        a9 = next(s for s in test if s.action_id == 9)
        trace = np.concatenate([a2.window(), a9.window()])
        preds = [p for _, p in stream_classify(model, trace, 64)]
        assert len(preds) == 3
        assert 2 in preds and 9 in preds


class TestUpdateState:
    def test_first_mask_window(self):
        s = ReminderState()
        assert update_state(s, 1, 10.0) is None
        assert s.last_mask_event_time == 10.0

    def test_interference_without_mask_event_notifies(self):
        s = ReminderState()
        assert update_state(s, 9, 10.0) == NOTIFY
        assert s.notification_log == [(10.0, NOTIFY)]

    def test_within_silence_window(self):
        s = ReminderState(silence_window=1800)
        update_state(s, 3, 0.0)
        assert update_state(s, 9, 900.0) is None
        assert update_state(s, 9, 1800.0) is None  # boundary is still recent
        assert update_state(s, 9, 1800.5) == NOTIFY

    def test_cooldown(self):
        s = ReminderState(cooldown=300)
        assert update_state(s, 12, 0.0) == NOTIFY
        assert update_state(s, 12, 299.0) is None
        assert update_state(s, 12, 300.0) == NOTIFY

    @pytest.mark.parametrize("t", [5.0, 4.0])
    def test_non_monotone_timestamp(self, t):
        s = ReminderState()
        update_state(s, 1, 5.0)
        with pytest.raises(StreamOrderError):
            update_state(s, 1, t)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(st.integers(1, 18), st.floats(0.1, 400)), min_size=1, max_size=80),
           st.floats(1, 2000), st.floats(0, 600))
    def test_invariants(self, steps, window, cooldown):
        s = ReminderState(silence_window=window, cooldown=cooldown)
        t, times, notes = 0.0, [], []
        for action, dt in steps:
            t += dt
            times.append(t)
            if update_state(s, action, t) == NOTIFY:
                notes.append(t)
                # no mask detection within the silence window
                assert all(not (1 <= a <= 6 and tt >= t - window)
                           for (a, _), tt in zip(steps, times))
        assert all(b - a >= cooldown for a, b in zip(notes, notes[1:]))
        assert [ts for ts, _ in s.notification_log] == sorted(set(times))
        # causality: replaying any prefix gives the same decisions
        k = len(steps) // 2
        p = ReminderState(silence_window=window, cooldown=cooldown)
        for (action, _), tt in zip(steps[:k], times[:k]):
            update_state(p, action, tt)
        assert p.notification_log == s.notification_log[:k]

    def test_mask_only_stream_never_notifies(self):
        s = ReminderState(silence_window=1.0, cooldown=0.0)
        for i in range(500):
            assert update_state(s, 1 + i % 6, float(i * 10)) is None


class TestEngine:
    def test_timestamps_and_decisions(self):
        engine = ReminderEngine(MeanModel(), stride=64, silence_window=1800, cooldown=300)
        rows = engine.run(constant_trace([2, 9], 256), start_time=100.0)
        assert [r.window_start for r in rows] == [0, 64, 128, 192, 256, 320, 384]
        assert rows[0].timestamp == 100.0 + 128 / 50
        assert [r.predicted_action for r in rows][:3] == [2, 2, 2]
        assert rows[-1].predicted_action == 9
        assert all(r.decision == SILENT for r in rows)  # mask seen seconds earlier

    def test_trace_file_and_csv(self, tmp_path):
        trace = constant_trace([9], 192)
        rec = {"start_time": 50.0, "sample_rate": 50,
               "acc": trace[:, :3].tolist(), "gyro": trace[:, 3:].tolist()}
        p = tmp_path / "t.jsonl"
        p.write_text(json.dumps(rec) + "\n")
        data, start, rate = load_trace(p)
        assert data.shape == (192, 6) and start == 50.0 and rate == 50.0
        rows = ReminderEngine(MeanModel()).run(data, start)
        write_decisions(rows, tmp_path / "d.csv")
        lines = (tmp_path / "d.csv").read_text().splitlines()
        assert lines[0] == "timestamp,window_start,predicted_action,decision"
        assert lines[1:] == ["52.56,0,9,notify", "53.84,64,9,silent"]

    def test_trace_with_mixed_rates(self, tmp_path):
        recs = [{"sample_rate": r, "acc": [[0, 0, 0]], "gyro": [[0, 0, 0]]} for r in (50, 25)]
        p = tmp_path / "t.jsonl"
        p.write_text("\n".join(json.dumps(r) for r in recs))
        with pytest.raises(SchemaError):
            load_trace(p)
