"""Segment I/O, length normalization, fold construction and a synthetic IMU generator."""
from __future__ import annotations

import json
import math
import os
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import ProtocolError, RecordError, SchemaError

WINDOW_LEN = 128
MIN_LEN = 50
SAMPLE_RATE = 50.0
NUM_ACTIONS = 18
MASK_ACTIONS = range(1, 7)  # actions 1-6 are mask related, 7-18 interfere
HANDS = ("left", "right")


def is_mask_action(action_id: int) -> bool:
    return 1 <= action_id <= 6


@dataclass
class Segment:
    subject_id: str
    action_id: int
    hand: str
    acc: np.ndarray
    gyro: np.ndarray
    sample_rate: float = SAMPLE_RATE
    repeat_index: int = 0
    order_stamp: int = 0
    segment_id: str = ""

    def __post_init__(self):
        self.acc = np.asarray(self.acc, dtype=np.float64)
        self.gyro = np.asarray(self.gyro, dtype=np.float64)
        if not self.segment_id:
            self.segment_id = f"{self.subject_id}-a{self.action_id}-{self.hand}-r{self.repeat_index}"

    def __len__(self) -> int:
        return len(self.acc)


@dataclass
class NormalizedSegment:
    subject_id: str
    action_id: int
    hand: str
    acc: np.ndarray  # [128 x 3]
    gyro: np.ndarray
    source_id: str
    chunk_index: int
    order_stamp: int
    valid_len: int  # samples before the zero padding

    @property
    def id(self) -> str:
        return f"{self.source_id}#{self.chunk_index}"

    @property
    def label(self) -> int:
        return self.action_id - 1

    def window(self) -> np.ndarray:
        return np.concatenate([self.acc, self.gyro], axis=1)


def normalize_length(seg: Segment, window: int = WINDOW_LEN, min_len: int = MIN_LEN) -> list[NormalizedSegment]:
    """Cut into non-overlapping ``window``-sample chunks; pad or drop the remainder.

    A chunk shorter than ``min_len`` is discarded, otherwise it is zero-padded
    at the tail up to ``window`` samples.
    """
    out = []
    n = len(seg)
    for i, start in enumerate(range(0, n, window)):
        stop = min(start + window, n)
        valid = stop - start
        if valid < min_len:
            continue
        acc = np.zeros((window, 3))
        gyro = np.zeros((window, 3))
        acc[:valid] = seg.acc[start:stop]
        gyro[:valid] = seg.gyro[start:stop]
        out.append(NormalizedSegment(seg.subject_id, seg.action_id, seg.hand, acc, gyro,
                                     seg.segment_id, i, seg.order_stamp, valid))
    return out


def normalize_all(segments: Iterable[Segment]) -> list[NormalizedSegment]:
    return [ns for seg in segments for ns in normalize_length(seg)]


def stack_windows(segments: list[NormalizedSegment]) -> tuple[np.ndarray, np.ndarray]:
    """-> ([N x 128 x 6] windows, 0-based labels)."""
    if not segments:
        return np.zeros((0, WINDOW_LEN, 6)), np.zeros(0, dtype=np.int64)
    windows = np.stack([s.window() for s in segments])
    labels = np.array([s.label for s in segments], dtype=np.int64)
    return windows, labels


# -- JSON-lines segment files ------------------------------------------------

_REQUIRED = ("subject_id", "action_id", "hand", "acc", "gyro")


@dataclass
class IngestStats:
    raw_segments: int = 0
    normalized_segments: int = 0
    discarded_segments: int = 0  # raw segments that produced no window at all
    discarded_chunks: int = 0  # short chunks dropped, including whole short segments
    per_subject: dict = field(default_factory=dict)
    per_action: dict = field(default_factory=dict)
    per_hand: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _samples(rec, key, line):
    try:
        arr = np.asarray(rec[key], dtype=np.float64)
    except (TypeError, ValueError):
        raise SchemaError(f"field {key!r} must be a list of numeric triples", line=line) from None
    if arr.ndim != 2 or arr.shape[1] != 3 or arr.shape[0] < 1:
        raise SchemaError(f"field {key!r} must be a non-empty [L x 3] list, got shape {arr.shape}", line=line)
    if not np.all(np.isfinite(arr)):
        raise SchemaError(f"field {key!r} contains non-finite values", line=line)
    return arr


def segment_from_record(rec: dict, line: int | None = None, require_label: bool = True) -> Segment:
    if not isinstance(rec, dict):
        raise RecordError("record is not a JSON object", line=line)
    required = _REQUIRED if require_label else ("acc", "gyro")
    missing = [k for k in required if k not in rec]
    if missing:
        raise SchemaError(f"missing required field(s) {missing}", line=line)
    acc = _samples(rec, "acc", line)
    gyro = _samples(rec, "gyro", line)
    if acc.shape != gyro.shape:
        raise SchemaError(f"acc has {len(acc)} samples but gyro has {len(gyro)}", line=line)
    action = rec.get("action_id", 0)
    if require_label or "action_id" in rec:
        if isinstance(action, bool) or not isinstance(action, int) or not 1 <= action <= NUM_ACTIONS:
            raise SchemaError(f"action_id must be an integer in [1, {NUM_ACTIONS}], got {action!r}", line=line)
    hand = rec.get("hand", "right")
    if hand not in HANDS:
        raise SchemaError(f"hand must be one of {HANDS}, got {hand!r}", line=line)
    subject = rec.get("subject_id", "unknown")
    if not isinstance(subject, (str, int)) or isinstance(subject, bool):
        raise SchemaError(f"subject_id must be a string, got {subject!r}", line=line)
    rate = rec.get("sample_rate", SAMPLE_RATE)
    if not isinstance(rate, (int, float)) or rate <= 0:
        raise SchemaError(f"sample_rate must be positive, got {rate!r}", line=line)
    try:
        repeat = int(rec.get("repeat_index", 0))
        stamp = int(rec.get("order_stamp", line or 0))
    except (TypeError, ValueError):
        raise SchemaError("repeat_index and order_stamp must be integers", line=line) from None
    return Segment(str(subject), action, hand, acc, gyro, float(rate), repeat, stamp,
                   str(rec.get("segment_id", "")))


def segment_to_record(seg: Segment) -> dict:
    return {
        "segment_id": seg.segment_id,
        "subject_id": seg.subject_id,
        "action_id": seg.action_id,
        "hand": seg.hand,
        "sample_rate": seg.sample_rate,
        "repeat_index": seg.repeat_index,
        "order_stamp": seg.order_stamp,
        "acc": seg.acc.tolist(),
        "gyro": seg.gyro.tolist(),
    }


def read_records(path: str | os.PathLike):
    """Yield (line_number, parsed JSON) for every non-blank line."""
    with open(path) as f:
        for lineno, text in enumerate(f, start=1):
            if not text.strip():
                continue
            try:
                yield lineno, json.loads(text)
            except json.JSONDecodeError as exc:
                raise RecordError(f"malformed JSON: {exc.msg}", line=lineno) from None


def ingest(path: str | os.PathLike) -> tuple[list[Segment], IngestStats]:
    segments = [segment_from_record(rec, line) for line, rec in read_records(path)]
    return segments, ingest_stats(segments)


def ingest_stats(segments: list[Segment]) -> IngestStats:
    stats = IngestStats(raw_segments=len(segments))
    subj, act, hand = Counter(), Counter(), Counter()
    for seg in segments:
        subj[seg.subject_id] += 1
        act[str(seg.action_id)] += 1
        hand[seg.hand] += 1
        kept = len(normalize_length(seg))
        total_chunks = math.ceil(len(seg) / WINDOW_LEN)
        stats.normalized_segments += kept
        stats.discarded_chunks += total_chunks - kept
        stats.discarded_segments += kept == 0
    stats.per_subject = dict(sorted(subj.items()))
    stats.per_action = dict(sorted(act.items(), key=lambda kv: int(kv[0])))
    stats.per_hand = dict(sorted(hand.items()))
    return stats


def write_segments(segments: Iterable[Segment], path: str | os.PathLike) -> None:
    with open(path, "w") as f:
        for seg in segments:
            f.write(json.dumps(segment_to_record(seg), separators=(",", ":")))
            f.write("\n")


# -- fold construction -------------------------------------------------------

USER_DEPENDENT = "user_dependent"
USER_INDEPENDENT = "user_independent"


@dataclass
class FoldSpec:
    protocol: str
    fold_index: int
    train_ids: list[str]
    test_ids: list[str]
    held_out: str = ""  # group label or test subject

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FoldSpec":
        return cls(**d)


def make_user_dependent_folds(segments: list[NormalizedSegment], n_groups: int = 5) -> list[FoldSpec]:
    """Leave-one-group-out over temporal groups formed per (subject, action).

    Recordings of one (subject, action) are ordered by ``order_stamp`` and split
    into ``n_groups`` near-equal groups, earlier groups taking any extra. Every
    chunk follows its parent recording into the same group.
    """
    parents: dict[tuple, dict[str, int]] = {}
    for s in segments:
        parents.setdefault((s.subject_id, s.action_id), {})[s.source_id] = s.order_stamp
    group_of: dict[str, int] = {}
    for key in sorted(parents):
        ordered = sorted(parents[key].items(), key=lambda kv: (kv[1], kv[0]))
        for g, chunk in enumerate(np.array_split(np.arange(len(ordered)), n_groups)):
            for i in chunk:
                group_of[ordered[i][0]] = g
    folds = []
    for k in range(n_groups):
        test = [s.id for s in segments if group_of[s.source_id] == k]
        train = [s.id for s in segments if group_of[s.source_id] != k]
        folds.append(FoldSpec(USER_DEPENDENT, k, train, test, held_out=f"G{k + 1}"))
    return folds


def make_user_independent_folds(segments: list[NormalizedSegment]) -> list[FoldSpec]:
    subjects = sorted({s.subject_id for s in segments})
    if len(subjects) < 2:
        raise ProtocolError(f"leave-one-subject-out needs at least 2 subjects, got {len(subjects)}")
    folds = []
    for k, subj in enumerate(subjects):
        test = [s.id for s in segments if s.subject_id == subj]
        train = [s.id for s in segments if s.subject_id != subj]
        folds.append(FoldSpec(USER_INDEPENDENT, k, train, test, held_out=subj))
    return folds


def write_folds(folds: list[FoldSpec], path: str | os.PathLike) -> None:
    Path(path).write_text(json.dumps([f.to_dict() for f in folds], indent=1))


def read_folds(path: str | os.PathLike) -> list[FoldSpec]:
    return [FoldSpec.from_dict(d) for d in json.loads(Path(path).read_text())]


# -- synthetic generator -----------------------------------------------------

# Class k uses base frequency SYNTH_FREQS[k % 6], channel gains
# SYNTH_PATTERNS[k // 6] and amplitude-modulation depth SYNTH_AM_DEPTH[k % 3].
# The mask-related classes (k < 6) therefore share one gain pattern and differ
# by frequency; interfering classes use the other two patterns.
SYNTH_FREQS = (0.7, 1.2, 1.8, 2.5, 3.3, 4.2)  # Hz
SYNTH_PATTERNS = (
    (1.0, 0.2, 0.6, 0.8, 0.1, 0.3),
    (0.2, 1.0, 0.3, 0.1, 0.9, 0.5),
    (0.3, 0.3, 1.0, 0.2, 0.2, 1.0),
)
SYNTH_CHANNEL_PHASE = (0.0, 0.5, 1.0, 1.5, 2.0, 2.5)  # radians
SYNTH_HARMONIC = 0.3  # relative amplitude of the second harmonic
SYNTH_AM_DEPTH = (0.0, 0.3, 0.6)
SYNTH_AM_FREQ = 0.4  # Hz
SYNTH_NOISE = 0.15
SYNTH_LEN_RANGE = (60, 300)  # inclusive; every normalize_length branch is reachable


def synth_class_signal(action_id: int, n: int, *, rate=SAMPLE_RATE, amp=1.0, freq_scale=1.0,
                       phase=0.0, start=0.0) -> np.ndarray:
    """Noise-free [n x 6] signal of one action (no subject offsets)."""
    k = action_id - 1
    f = SYNTH_FREQS[k % 6] * freq_scale
    gains = np.asarray(SYNTH_PATTERNS[k // 6])
    t = start + np.arange(n) / rate
    env = 1.0 + SYNTH_AM_DEPTH[k % 3] * np.sin(2 * np.pi * SYNTH_AM_FREQ * t)
    ch_phase = np.asarray(SYNTH_CHANNEL_PHASE)
    arg = 2 * np.pi * f * t[:, None] + phase
    base = np.sin(arg + ch_phase) + SYNTH_HARMONIC * np.sin(2 * arg + ch_phase[::-1])
    return amp * env[:, None] * gains * base


def synth_generate(num_subjects: int, per_class: int, seed: int, num_actions: int = NUM_ACTIONS) -> list[Segment]:
    """Synthetic 6-channel recordings, ``per_class`` per (subject, action).

    Subjects differ by amplitude (x0.8-1.2), tempo (x0.95-1.05) and a constant
    per-channel offset; each recording gets a random phase, amplitude jitter,
    length in ``SYNTH_LEN_RANGE`` and white noise. The first half of each
    subject's repeats are right-hand, the rest left-hand.
    """
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    rng = np.random.default_rng(seed)
    out = []
    for s in range(num_subjects):
        subject = f"S{s + 1:02d}"
        amp = rng.uniform(0.8, 1.2)
        tempo = rng.uniform(0.95, 1.05)
        offset = rng.normal(0.0, 0.2, size=6)
        stamp = 0
        for action in range(1, num_actions + 1):
            for r in range(per_class):
                n = int(rng.integers(SYNTH_LEN_RANGE[0], SYNTH_LEN_RANGE[1] + 1))
                sig = synth_class_signal(action, n, amp=amp * rng.uniform(0.9, 1.1), freq_scale=tempo,
                                         phase=rng.uniform(0, 2 * np.pi))
                sig = sig + offset + rng.normal(0.0, SYNTH_NOISE, size=sig.shape)
                hand = "right" if r < (per_class + 1) // 2 else "left"
                out.append(Segment(subject, action, hand, sig[:, :3], sig[:, 3:], SAMPLE_RATE, r, stamp))
                stamp += 1
    return out
