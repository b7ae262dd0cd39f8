"""Fold protocols, confusion matrices and the binary reminder/silence rates."""
from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from .checkpoint import save_checkpoint
from .data import (
    NUM_ACTIONS,
    USER_DEPENDENT,
    USER_INDEPENDENT,
    FoldSpec,
    NormalizedSegment,
    make_user_dependent_folds,
    make_user_independent_folds,
    stack_windows,
)
from .errors import ProtocolError
from .model import MixerConfig, MixerModel
from .optim import TrainSchedule, train

log = logging.getLogger(__name__)

PROTOCOLS = (USER_DEPENDENT, USER_INDEPENDENT)
MASK_CLASSES = slice(0, 6)  # 0-based indices of actions 1-6
OTHER_CLASSES = slice(6, NUM_ACTIONS)


def confusion_matrix(labels, preds, num_classes: int = NUM_ACTIONS) -> np.ndarray:
    """Counts with true class on rows, predicted class on columns."""
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(labels), np.asarray(preds)), 1)
    return cm


class ReminderRates(NamedTuple):
    reminder: Optional[float]  # None when no interfering-action samples exist
    silence: Optional[float]  # None when no mask-related samples exist

    @property
    def reminder_defined(self) -> bool:
        return self.reminder is not None

    @property
    def silence_defined(self) -> bool:
        return self.silence is not None


def binary_reminder_metrics(confusion) -> ReminderRates:
    cm = np.asarray(confusion)
    if cm.shape != (NUM_ACTIONS, NUM_ACTIONS):
        raise ProtocolError(f"expected an {NUM_ACTIONS}x{NUM_ACTIONS} confusion matrix, got {cm.shape}")
    other_total = cm[OTHER_CLASSES].sum()
    mask_total = cm[MASK_CLASSES].sum()
    reminder = float(cm[OTHER_CLASSES, OTHER_CLASSES].sum() / other_total) if other_total else None
    silence = float(cm[MASK_CLASSES, MASK_CLASSES].sum() / mask_total) if mask_total else None
    return ReminderRates(reminder, silence)


@dataclass
class FoldMetrics:
    labels: np.ndarray
    preds: np.ndarray
    subjects: list
    hands: list

    @property
    def accuracy(self) -> float:
        return float(np.mean(self.labels == self.preds))

    @property
    def confusion(self) -> np.ndarray:
        return confusion_matrix(self.labels, self.preds)


def evaluate_fold(model: MixerModel, test: list[NormalizedSegment]) -> FoldMetrics:
    if not test:
        raise ProtocolError("cannot evaluate on an empty test set")
    if model.config.num_classes != NUM_ACTIONS:
        raise ProtocolError(f"model has {model.config.num_classes} classes, expected {NUM_ACTIONS}")
    windows, labels = stack_windows(test)
    preds = model.predict(windows)
    return FoldMetrics(labels, preds, [s.subject_id for s in test], [s.hand for s in test])


@dataclass
class FoldResult:
    fold_index: int
    held_out: str
    n_train: int
    n_test: int
    accuracy: float
    reminder_rate: Optional[float]
    silence_rate: Optional[float]
    epochs: int
    stopped_early: bool
    final_loss: float


@dataclass
class EvalReport:
    protocol: str
    model: dict
    schedule: dict
    base_seed: int
    folds: list = field(default_factory=list)  # FoldResult dicts
    overall_accuracy: float = 0.0
    mean_fold_accuracy: float = 0.0
    confusion: list = field(default_factory=list)
    # micro: pooled over every test segment; macro: mean of per-subject rates
    reminder_rate: Optional[float] = None
    silence_rate: Optional[float] = None
    reminder_rate_macro: Optional[float] = None
    silence_rate_macro: Optional[float] = None
    undefined_rates: list = field(default_factory=list)
    per_subject: dict = field(default_factory=dict)
    per_hand: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls.from_dict(json.loads(text))


def make_folds(segments: list[NormalizedSegment], protocol: str) -> list[FoldSpec]:
    if protocol == USER_DEPENDENT:
        return make_user_dependent_folds(segments)
    if protocol == USER_INDEPENDENT:
        return make_user_independent_folds(segments)
    raise ProtocolError(f"unknown protocol {protocol!r}; expected one of {PROTOCOLS}")


def _run_fold(cfg: MixerConfig, schedule: TrainSchedule, seed: int, train_set, test_set, ckpt_path):
    model = MixerModel(cfg, rng=seed)
    windows, labels = stack_windows(train_set)
    result = train(model, windows, labels, schedule, seed=seed)
    metrics = evaluate_fold(model, test_set)
    if ckpt_path is not None:
        save_checkpoint(model, ckpt_path)
    return result, metrics


def _accuracy_by(keys, labels, preds) -> dict:
    keys = np.asarray(keys)
    return {
        str(k): float(np.mean(labels[keys == k] == preds[keys == k]))
        for k in sorted(set(keys.tolist()))
    }


def run_protocol(cfg: MixerConfig, segments: list[NormalizedSegment], protocol: str,
                 schedule: TrainSchedule | None = None, base_seed: int = 0, jobs: int = 1,
                 model_dir: str | os.PathLike | None = None) -> EvalReport:
    """Train and test one model per fold; fold k uses seed ``base_seed + k``."""
    schedule = schedule or TrainSchedule()
    folds = make_folds(segments, protocol)
    by_id = {s.id: s for s in segments}
    if model_dir is not None:
        Path(model_dir).mkdir(parents=True, exist_ok=True)
    tasks = []
    for f in folds:
        ckpt = None if model_dir is None else Path(model_dir) / f"fold_{f.fold_index}.ckpt"
        tasks.append((cfg, schedule, base_seed + f.fold_index,
                      [by_id[i] for i in f.train_ids], [by_id[i] for i in f.test_ids], ckpt))

    outcomes = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_fold, *t) for t in tasks]
            for f, fut in zip(folds, futures):
                outcomes.append(_collect(f, fut.result))
    else:
        for f, t in zip(folds, tasks):
            outcomes.append(_collect(f, lambda t=t: _run_fold(*t)))
    return assemble_report(cfg, schedule, base_seed, protocol, folds, outcomes)


def _collect(fold: FoldSpec, thunk):
    try:
        out = thunk()
    except Exception as exc:
        raise ProtocolError(f"fold {fold.fold_index} (held out {fold.held_out}) failed: {exc}") from exc
    log.info("fold %d (%s): accuracy %.4f", fold.fold_index, fold.held_out, out[1].accuracy)
    return out


def assemble_report(cfg, schedule, base_seed, protocol, folds, outcomes) -> EvalReport:
    report = EvalReport(protocol, cfg.to_dict(), schedule.to_dict(), base_seed)
    all_labels, all_preds, all_subjects, all_hands = [], [], [], []
    for f, (result, m) in zip(folds, outcomes):
        rates = binary_reminder_metrics(m.confusion)
        report.folds.append(asdict(FoldResult(
            f.fold_index, f.held_out, len(f.train_ids), len(f.test_ids), m.accuracy,
            rates.reminder, rates.silence, len(result.history), result.stopped_early,
            result.history[-1][2] if result.history else float("nan"),
        )))
        all_labels.append(m.labels)
        all_preds.append(m.preds)
        all_subjects += m.subjects
        all_hands += m.hands
    labels = np.concatenate(all_labels)
    preds = np.concatenate(all_preds)
    cm = confusion_matrix(labels, preds)
    report.confusion = cm.tolist()
    report.overall_accuracy = float(np.trace(cm) / cm.sum())
    report.mean_fold_accuracy = float(np.mean([r["accuracy"] for r in report.folds]))
    micro = binary_reminder_metrics(cm)
    report.reminder_rate, report.silence_rate = micro.reminder, micro.silence
    if not micro.reminder_defined:
        report.undefined_rates.append("reminder_rate")
    if not micro.silence_defined:
        report.undefined_rates.append("silence_rate")

    subjects = np.asarray(all_subjects)
    per_subject_rates = [
        binary_reminder_metrics(confusion_matrix(labels[subjects == s], preds[subjects == s]))
        for s in sorted(set(all_subjects))
    ]
    rem = [r.reminder for r in per_subject_rates if r.reminder_defined]
    sil = [r.silence for r in per_subject_rates if r.silence_defined]
    report.reminder_rate_macro = float(np.mean(rem)) if rem else None
    report.silence_rate_macro = float(np.mean(sil)) if sil else None
    if not rem:
        report.undefined_rates.append("reminder_rate_macro")
    if not sil:
        report.undefined_rates.append("silence_rate_macro")
    report.per_subject = _accuracy_by(all_subjects, labels, preds)
    report.per_hand = _accuracy_by(all_hands, labels, preds)
    return report


def write_report(report: EvalReport, out_dir: str | os.PathLike) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    with open(out / "confusion.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["true\\pred"] + [str(k) for k in range(1, NUM_ACTIONS + 1)])
        for k, row in enumerate(report.confusion, start=1):
            w.writerow([k] + row)
    cols = ["fold_index", "held_out", "n_train", "n_test", "accuracy", "reminder_rate",
            "silence_rate", "epochs", "stopped_early", "final_loss"]
    with open(out / "folds.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=cols)
        w.writeheader()
        for row in report.folds:
            w.writerow({k: ("" if row[k] is None else row[k]) for k in cols})
