"""Versioned binary checkpoints.

Layout (little-endian)::

    8 bytes   magic  b"IMUMIXCK"
    uint32    format version (currently 1)
    7 x int64 window_len, clip_len, hidden_dim, num_layers, num_classes,
              token_hidden, channel_hidden
    uint32    number of parameter arrays
    repeated: uint64 element count, then that many float64 values

Arrays appear in ``MixerModel.named_parameters()`` order: ``embed.weight``,
then for each mixer layer ``ln1.gain, ln1.shift, token_fc1.weight,
token_fc1.bias, token_fc2.weight, token_fc2.bias, ln2.gain, ln2.shift,
channel_fc1.weight, channel_fc1.bias, channel_fc2.weight, channel_fc2.bias``,
then ``head.weight, head.bias``. Weights are stored [in x out] row-major.
"""
from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .errors import (
    CheckpointError,
    CheckpointLengthError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    ConfigError,
)
from .model import MixerConfig, MixerModel, count_params

MAGIC = b"IMUMIXCK"
FORMAT_VERSION = 1
_CONFIG_FIELDS = ("window_len", "clip_len", "hidden_dim", "num_layers", "num_classes",
                  "token_hidden", "channel_hidden")
_HEADER = struct.Struct("<8sI7qI")


def save_checkpoint(model: MixerModel, path: str | os.PathLike) -> None:
    cfg = model.config
    params = list(model.named_parameters())
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(_HEADER.pack(MAGIC, FORMAT_VERSION, *(getattr(cfg, k) for k in _CONFIG_FIELDS), len(params)))
        for _, p in params:
            f.write(struct.pack("<Q", p.size))
            f.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> MixerModel:
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        if not blob.startswith(MAGIC[: len(blob)]):
            raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
        raise CheckpointTruncatedError(f"{path}: header truncated ({len(blob)} bytes)")
    magic, version, *rest = _HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    *fields, n_arrays = rest
    try:
        cfg = MixerConfig(**dict(zip(_CONFIG_FIELDS, fields)))
    except ConfigError as exc:
        raise CheckpointError(f"{path}: invalid stored config: {exc}") from None

    model = MixerModel(cfg, rng=0)
    params = list(model.named_parameters())
    if n_arrays != len(params):
        raise CheckpointLengthError(
            f"{path}: stores {n_arrays} parameter arrays, config implies {len(params)}"
        )
    offset = _HEADER.size
    values = []
    for name, p in params:
        if offset + 8 > len(blob):
            raise CheckpointTruncatedError(f"{path}: truncated before length of {name}")
        (count,) = struct.unpack_from("<Q", blob, offset)
        offset += 8
        if count != p.size:
            raise CheckpointLengthError(f"{path}: {name} stores {count} values, config implies {p.size}")
        end = offset + 8 * count
        if end > len(blob):
            raise CheckpointTruncatedError(f"{path}: truncated inside {name}")
        values.append(np.frombuffer(blob, dtype="<f8", count=count, offset=offset).astype(np.float64))
        offset = end
    if offset != len(blob):
        raise CheckpointLengthError(f"{path}: {len(blob) - offset} trailing bytes after last array")
    for (_, p), v in zip(params, values):
        p.data = v.reshape(p.shape)
    return model


def checkpoint_size(cfg: MixerConfig) -> int:
    """Exact file size in bytes for a checkpoint of ``cfg``."""
    n_arrays = 1 + 12 * cfg.num_layers + 2
    return _HEADER.size + 8 * n_arrays + 8 * count_params(cfg)
