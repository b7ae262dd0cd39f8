"""MLP-Mixer over clips of a 6-channel IMU window, plus parameter/FLOP accounting."""
from __future__ import annotations

import re
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, UsageError
from .nn import LayerNorm, Linear, Module, gelu, global_avg_pool
from .tensor import Tensor

NUM_CHANNELS = 6  # accelerometer xyz + gyroscope xyz

# scale tag -> (mixer layers, hidden dim)
SCALES = {"es": (2, 128), "ms": (4, 256), "s": (8, 512)}
CLIP_LENS = (32, 16, 8)
_VARIANT_RE = re.compile(r"^mixer/(es|ms|s)/(32|16|8)$", re.IGNORECASE)


@dataclass(frozen=True)
class MixerConfig:
    clip_len: int
    hidden_dim: int
    num_layers: int
    window_len: int = 128
    num_classes: int = 18
    token_hidden: Optional[int] = None
    channel_hidden: Optional[int] = None

    def __post_init__(self):
        for key in ("clip_len", "hidden_dim", "window_len", "num_classes"):
            if int(getattr(self, key)) < 1:
                raise ConfigError(f"{key} must be positive, got {getattr(self, key)}")
        if self.num_layers < 0:
            raise ConfigError(f"num_layers must be >= 0, got {self.num_layers}")
        if self.window_len % self.clip_len:
            raise ConfigError(
                f"window_len {self.window_len} is not divisible by clip_len {self.clip_len}"
            )
        if self.hidden_dim < 2:
            raise ConfigError("hidden_dim must be >= 2 for layer normalization")
        if self.token_hidden is None:
            object.__setattr__(self, "token_hidden", 4 * self.num_clips)
        if self.channel_hidden is None:
            object.__setattr__(self, "channel_hidden", 4 * self.hidden_dim)
        if self.token_hidden < 1 or self.channel_hidden < 1:
            raise ConfigError("MLP hidden widths must be positive")

    @property
    def num_clips(self) -> int:
        return self.window_len // self.clip_len

    @property
    def clip_features(self) -> int:
        return NUM_CHANNELS * self.clip_len

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MixerConfig":
        known = {"clip_len", "hidden_dim", "num_layers", "window_len", "num_classes",
                 "token_hidden", "channel_hidden"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        try:
            return cls(**{k: (None if v is None else int(v)) for k, v in d.items()})
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def variant_names() -> list[str]:
    return [f"mixer/{s}/{n}" for s in SCALES for n in CLIP_LENS]


def resolve_variant(name: str) -> MixerConfig:
    """Map a table name such as ``mixer/ms/8`` to its configuration."""
    m = _VARIANT_RE.match(name.strip())
    if not m:
        raise UsageError(f"unknown model variant {name!r}; valid: {', '.join(variant_names())}")
    layers, dim = SCALES[m.group(1).lower()]
    return MixerConfig(clip_len=int(m.group(2)), hidden_dim=dim, num_layers=layers)


class MixerLayer(Module):
    """Token (inter-clip) MLP then channel (intra-clip) MLP, each pre-normed with a residual."""

    def __init__(self, cfg: MixerConfig, rng: np.random.Generator):
        c, h = cfg.num_clips, cfg.hidden_dim
        self.ln1 = LayerNorm(h)
        self.token_fc1 = Linear(c, cfg.token_hidden, rng=rng)
        self.token_fc2 = Linear(cfg.token_hidden, c, rng=rng)
        self.ln2 = LayerNorm(h)
        self.channel_fc1 = Linear(h, cfg.channel_hidden, rng=rng)
        self.channel_fc2 = Linear(cfg.channel_hidden, h, rng=rng)

    def __call__(self, e: Tensor) -> Tensor:
        return mixer_layer_forward(e, self)


def mixer_layer_forward(e: Tensor, layer: MixerLayer) -> Tensor:
    if e.ndim != 3 or e.shape[1] != layer.token_fc1.in_features or e.shape[2] != layer.ln1.dim:
        raise DimensionError(
            f"mixer layer expects [B x {layer.token_fc1.in_features} x {layer.ln1.dim}], got {e.shape}"
        )
    # across clips, one feature column at a time
    y = T.transpose(layer.ln1(e))
    y = layer.token_fc2(gelu(layer.token_fc1(y)))
    u = T.add(e, T.transpose(y))
    # across features, one clip row at a time
    z = layer.channel_fc2(gelu(layer.channel_fc1(layer.ln2(u))))
    return T.add(u, z)


class MixerModel(Module):
    def __init__(self, config: MixerConfig, rng: np.random.Generator | int | None = None):
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        self.config = config
        self.embed = Linear(config.clip_features, config.hidden_dim, bias=False, rng=rng)
        self.layers = [MixerLayer(config, rng) for _ in range(config.num_layers)]
        self.head = Linear(config.hidden_dim, config.num_classes, rng=rng)

    def __call__(self, acc, gyro) -> Tensor:
        return forward(self, acc, gyro)

    def logits(self, windows: np.ndarray) -> Tensor:
        """Logits for stacked windows of shape [B x L x 6] (acc then gyro channels)."""
        windows = np.asarray(windows, dtype=np.float64)
        if windows.ndim != 3 or windows.shape[2] != NUM_CHANNELS:
            raise DimensionError(f"windows must be [B x L x {NUM_CHANNELS}], got {windows.shape}")
        return forward(self, windows[:, :, :3], windows[:, :, 3:])

    def predict(self, windows: np.ndarray, batch_size: int = 256) -> np.ndarray:
        """Class indices (0-based); ties go to the lowest index."""
        windows = np.asarray(windows, dtype=np.float64)
        out = [
            np.argmax(self.logits(windows[i:i + batch_size]).data, axis=1)
            for i in range(0, len(windows), batch_size)
        ]
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


def cut_and_embed(acc, gyro, model: MixerModel) -> Tensor:
    """Split each window into clips, join acc/gyro per clip, flatten, embed: -> [B x c x h]."""
    cfg = model.config
    acc, gyro = T.as_tensor(acc), T.as_tensor(gyro)
    if acc.ndim != 3 or acc.shape[-1] != 3 or acc.shape != gyro.shape:
        raise DimensionError(f"acc and gyro must both be [B x L x 3]; got {acc.shape} and {gyro.shape}")
    b, length, _ = acc.shape
    if length % cfg.clip_len:
        raise ConfigError(f"input length {length} is not divisible by clip_len {cfg.clip_len}")
    if length != cfg.window_len:
        raise DimensionError(f"model expects windows of {cfg.window_len} samples, got {length}")
    x = T.concat([acc, gyro], axis=-1)
    x = T.reshape(x, (b, cfg.num_clips, cfg.clip_features))
    return model.embed(x)


def forward(model: MixerModel, acc, gyro) -> Tensor:
    v = cut_and_embed(acc, gyro, model)
    for layer in model.layers:
        v = layer(v)
    return model.head(global_avg_pool(v))


def count_params(cfg: MixerConfig) -> int:
    c, h = cfg.num_clips, cfg.hidden_dim
    th, ch = cfg.token_hidden, cfg.channel_hidden
    embed = cfg.clip_features * h
    token = (c * th + th) + (th * c + c)
    channel = (h * ch + ch) + (ch * h + h)
    norms = 2 * (2 * h)
    head = h * cfg.num_classes + cfg.num_classes
    return embed + cfg.num_layers * (token + channel + norms) + head


def count_flops(cfg: MixerConfig) -> int:
    """Multiply-accumulates for one window's forward pass (1 MAC = 1 FLOP)."""
    c, h = cfg.num_clips, cfg.hidden_dim
    th, ch = cfg.token_hidden, cfg.channel_hidden
    embed = c * cfg.clip_features * h
    token = h * (c * th + th * c)
    channel = c * (h * ch + ch * h)
    head = h * cfg.num_classes
    return embed + cfg.num_layers * (token + channel) + head
