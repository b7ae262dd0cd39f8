"""AdamW, the staircase learning-rate schedule, early stopping and the training loop."""
from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import ConfigError, LabelError, NonFiniteError, ProtocolError
from .nn import softmax_cross_entropy
from .tensor import GradTape

log = logging.getLogger(__name__)


@dataclass
class TrainSchedule:
    initial_lr: float = 0.0005
    decay_factor: float = 0.5
    decay_every: int = 40
    max_epochs: int = 400
    patience: int = 40
    min_delta: float = 1e-6
    batch_size: int = 64
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.decay_every < 1 or self.max_epochs < 0 or self.patience < 1 or self.batch_size < 1:
            raise ConfigError(f"invalid schedule: {self}")
        if self.initial_lr < 0 or self.weight_decay < 0:
            raise ConfigError("learning rate and weight decay must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainSchedule":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown schedule keys: {sorted(unknown)}")
        return cls(**d)


def lr_at(schedule: TrainSchedule, epoch: int) -> float:
    return schedule.initial_lr * schedule.decay_factor ** (epoch // schedule.decay_every)


@dataclass
class AdamWState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


class AdamW:
    """Adam with decoupled weight decay over a fixed list of named parameters."""

    def __init__(self, named_params, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.01):
        self.names, self.params = zip(*named_params) if named_params else ((), ())
        self.state = AdamWState(beta1, beta2, eps, weight_decay)
        self.state.m = [np.zeros_like(p.data) for p in self.params]
        self.state.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float) -> None:
        adamw_step(self.state, self.params, [p.grad for p in self.params], lr, names=self.names)


def adamw_step(state: AdamWState, params, grads, lr: float, names=None) -> None:
    """Update ``params`` in place from ``grads``; increments ``state.step``."""
    names = names or [f"param[{i}]" for i in range(len(params))]
    if not state.m:
        state.m = [np.zeros_like(p.data) for p in params]
        state.v = [np.zeros_like(p.data) for p in params]
    for name, p, g in zip(names, params, grads):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ConfigError(f"gradient shape {g.shape} does not match {name} {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(
                f"non-finite gradient for {name} at step {state.step + 1}", name=name, step=state.step + 1
            )
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m[i]
        v = state.v[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / corr1
        v_hat = v / corr2
        p.data -= lr * (m_hat / (np.sqrt(v_hat) + state.eps) + state.weight_decay * p.data)


class EarlyStopping:
    """Stop once the monitored loss has gone ``patience`` epochs without a ``min_delta`` improvement."""

    def __init__(self, patience: int = 40, min_delta: float = 1e-6):
        self.patience = patience
        self.min_delta = min_delta
        self.best = math.inf
        self.best_epoch = -1
        self.epoch = -1

    def update(self, loss: float) -> bool:
        self.epoch += 1
        if loss < self.best - self.min_delta:
            self.best = loss
            self.best_epoch = self.epoch
        return self.epoch - self.best_epoch >= self.patience


@dataclass
class TrainResult:
    history: list  # (epoch, lr, mean_loss)
    stopped_early: bool
    best_epoch: int
    steps: int

    @property
    def losses(self) -> list[float]:
        return [row[2] for row in self.history]


def train(model, windows, labels, schedule: TrainSchedule | None = None, seed: int = 0,
          progress=None) -> TrainResult:
    """Minibatch AdamW on softmax cross-entropy; returns per-epoch mean training loss.

    ``windows`` is [N x L x 6], ``labels`` holds 0-based class indices.
    """
    schedule = schedule or TrainSchedule()
    windows = np.asarray(windows, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = len(windows)
    if n == 0:
        raise ProtocolError("cannot train on an empty dataset")
    if len(labels) != n:
        raise ProtocolError(f"{n} windows but {len(labels)} labels")
    k = model.config.num_classes
    if labels.min() < 0 or labels.max() >= k:
        raise LabelError(f"labels must lie in [0, {k})")

    rng = np.random.default_rng(seed)
    opt = AdamW(list(model.named_parameters()), schedule.beta1, schedule.beta2, schedule.eps,
                schedule.weight_decay)
    stopper = EarlyStopping(schedule.patience, schedule.min_delta)
    history = []
    stopped = False
    for epoch in range(schedule.max_epochs):
        lr = lr_at(schedule, epoch)
        order = rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, schedule.batch_size)):
            idx = order[start:start + schedule.batch_size]
            with GradTape() as tape:
                loss = softmax_cross_entropy(model.logits(windows[idx]), labels[idx])
            value = loss.item()
            if not math.isfinite(value):
                raise NonFiniteError(f"non-finite loss at epoch {epoch}, batch {b}", epoch=epoch, batch=b)
            tape.backward(loss)
            opt.step(lr)
            total += value * len(idx)
        mean_loss = total / n
        history.append((epoch, lr, mean_loss))
        if progress is not None:
            progress(epoch, lr, mean_loss)
        log.debug("epoch %d lr %.3g loss %.6f", epoch, lr, mean_loss)
        if stopper.update(mean_loss):
            stopped = True
            break
    return TrainResult(history, stopped, stopper.best_epoch, opt.state.step)


def write_loss_csv(history, path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "lr", "mean_loss"])
        for epoch, lr, loss in history:
            w.writerow([epoch, repr(lr), repr(loss)])
