"""Offline streaming reminder: sliding-window classification driving a silent/notify loop."""
from __future__ import annotations

import csv
import os
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .data import SAMPLE_RATE, WINDOW_LEN, is_mask_action, read_records, segment_from_record
from .errors import SchemaError, StreamOrderError

SILENT = "silent"
NOTIFY = "notify"


@dataclass
class ReminderState:
    silence_window: float = 1800.0  # seconds a mask detection keeps the reminder quiet
    cooldown: float = 300.0  # minimum seconds between notifications
    last_mask_event_time: Optional[float] = None
    last_notify_time: Optional[float] = None
    notification_log: list = field(default_factory=list)  # (timestamp, decision)

    @property
    def last_time(self) -> Optional[float]:
        return self.notification_log[-1][0] if self.notification_log else None


def update_state(state: ReminderState, predicted_action: int, timestamp: float) -> Optional[str]:
    """Feed one window decision; returns ``NOTIFY`` when a reminder fires, else None."""
    if state.last_time is not None and timestamp <= state.last_time:
        raise StreamOrderError(f"timestamp {timestamp} does not follow {state.last_time}")
    event = None
    if is_mask_action(predicted_action):
        state.last_mask_event_time = timestamp
    else:
        stale = (state.last_mask_event_time is None
                 or timestamp - state.last_mask_event_time > state.silence_window)
        cooled = state.last_notify_time is None or timestamp - state.last_notify_time >= state.cooldown
        if stale and cooled:
            state.last_notify_time = timestamp
            event = NOTIFY
    state.notification_log.append((timestamp, event or SILENT))
    return event


def stream_classify(model, trace, stride: int = 64, window: int = WINDOW_LEN) -> list[tuple[int, int]]:
    """Classify every full ``window`` of ``trace`` [N x 6] at ``stride``.

    Returns ``(window_start, action_id)`` pairs with 1-based action ids. A
    partial tail window is never padded.
    """
    trace = np.asarray(trace, dtype=np.float64)
    if trace.ndim != 2 or trace.shape[1] != 6:
        raise SchemaError(f"trace must be [N x 6], got {trace.shape}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if len(trace) < window:
        warnings.warn(f"trace of {len(trace)} samples is shorter than one {window}-sample window")
        return []
    starts = np.arange(0, len(trace) - window + 1, stride)
    windows = np.stack([trace[s:s + window] for s in starts])
    preds = model.predict(windows)
    return [(int(s), int(p) + 1) for s, p in zip(starts, preds)]


class Decision(NamedTuple):
    timestamp: float
    window_start: int
    predicted_action: int
    decision: str


class ReminderEngine:
    """Replays a recorded trace through a classifier and the reminder state machine."""

    def __init__(self, model, stride: int = 64, silence_window: float = 1800.0, cooldown: float = 300.0,
                 sample_rate: float = SAMPLE_RATE):
        self.model = model
        self.stride = stride
        self.sample_rate = sample_rate
        self.state = ReminderState(silence_window, cooldown)

    def run(self, trace, start_time: float = 0.0) -> list[Decision]:
        rows = []
        for start, action in stream_classify(self.model, trace, self.stride):
            # a window is decided when its last sample arrives
            t = start_time + (start + WINDOW_LEN) / self.sample_rate
            event = update_state(self.state, action, t)
            rows.append(Decision(t, start, action, event or SILENT))
        return rows


def load_trace(path: str | os.PathLike) -> tuple[np.ndarray, float, float]:
    """Concatenate the records of a JSON-lines trace -> ([N x 6], start_time, sample_rate)."""
    parts = []
    rate = None
    start_time = 0.0
    for line, rec in read_records(path):
        seg = segment_from_record(rec, line, require_label=False)
        if rate is None:
            rate = seg.sample_rate
            start_time = float(rec.get("start_time", 0.0))
        elif seg.sample_rate != rate:
            raise SchemaError(f"sample_rate {seg.sample_rate} differs from earlier {rate}", line=line)
        parts.append(np.concatenate([seg.acc, seg.gyro], axis=1))
    if not parts:
        return np.zeros((0, 6)), 0.0, SAMPLE_RATE
    return np.concatenate(parts), start_time, rate


def write_decisions(rows: list[Decision], path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["timestamp", "window_start", "predicted_action", "decision"])
        for r in rows:
            w.writerow([repr(r.timestamp), r.window_start, r.predicted_action, r.decision])
