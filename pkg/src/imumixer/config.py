"""Run configuration: JSON config files merged with command-line overrides.

Config file (JSON object, every key optional)::

    {
      "model": "mixer/ms/8",            # or an object of MixerConfig fields
      "schedule": {"max_epochs": 400, "batch_size": 64, ...},
      "seed": 0,
      "data": "segments.jsonl",
      "out": "runs/ms8",
      "jobs": 1,
      "stream": {"stride": 64, "silence_window": 1800, "cooldown": 300}
    }

Precedence: built-in defaults < config file < command-line flags.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import ConfigError, UsageError
from .model import MixerConfig, resolve_variant
from .optim import TrainSchedule

DEFAULT_VARIANT = "mixer/ms/8"
_TOP_KEYS = {"model", "schedule", "seed", "data", "out", "jobs", "stream"}
_STREAM_KEYS = {"stride", "silence_window", "cooldown"}


@dataclass
class StreamSettings:
    stride: int = 64
    silence_window: float = 1800.0
    cooldown: float = 300.0


@dataclass
class RunConfig:
    model: MixerConfig = field(default_factory=lambda: resolve_variant(DEFAULT_VARIANT))
    model_name: Optional[str] = DEFAULT_VARIANT
    schedule: TrainSchedule = field(default_factory=TrainSchedule)
    seed: int = 0
    data: Optional[str] = None
    out: Optional[str] = None
    jobs: int = 1
    stream: StreamSettings = field(default_factory=StreamSettings)

    def to_dict(self) -> dict:
        return {
            "model": self.model.to_dict(),
            "model_name": self.model_name,
            "schedule": self.schedule.to_dict(),
            "seed": self.seed,
            "data": self.data,
            "out": self.out,
            "jobs": self.jobs,
            "stream": vars(self.stream).copy(),
        }


def model_from_spec(spec) -> tuple[MixerConfig, Optional[str]]:
    if isinstance(spec, str):
        return resolve_variant(spec), spec.lower()
    if isinstance(spec, dict):
        return MixerConfig.from_dict(spec), None
    raise ConfigError(f"'model' must be a variant name or an object, got {type(spec).__name__}")


def load_config(path: str | os.PathLike | None) -> RunConfig:
    cfg = RunConfig()
    if path is None:
        return cfg
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {p}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON: {exc.msg} (line {exc.lineno})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{p}: top level must be a JSON object")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"{p}: unknown keys {sorted(unknown)}")
    if "model" in raw:
        cfg.model, cfg.model_name = model_from_spec(raw["model"])
    if "schedule" in raw:
        try:
            cfg.schedule = TrainSchedule.from_dict(raw["schedule"])
        except TypeError as exc:
            raise ConfigError(f"{p}: schedule: {exc}") from None
    if "stream" in raw:
        bad = set(raw["stream"]) - _STREAM_KEYS
        if bad:
            raise ConfigError(f"{p}: unknown stream keys {sorted(bad)}")
        cfg.stream = StreamSettings(**raw["stream"])
    for key in ("seed", "jobs"):
        if key in raw:
            if not isinstance(raw[key], int):
                raise ConfigError(f"{p}: {key} must be an integer")
            setattr(cfg, key, raw[key])
    for key in ("data", "out"):
        if key in raw:
            setattr(cfg, key, str(raw[key]))
    return cfg
