import struct

import numpy as np
import pytest

from imumixer.checkpoint import FORMAT_VERSION, checkpoint_size, load_checkpoint, save_checkpoint
from imumixer.errors import (
    CheckpointError,
    CheckpointLengthError,
    CheckpointTruncatedError,
    CheckpointVersionError,
)
from imumixer.model import MixerModel, count_params, resolve_variant

HEADER = 8 + 4 + 7 * 8 + 4


@pytest.fixture
def saved(tmp_path):
    model = MixerModel(resolve_variant("mixer/es/32"), rng=9)
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    return model, path


def test_round_trip_bitwise(saved, rng):
    model, path = saved
    loaded = load_checkpoint(path)
    assert loaded.config == model.config
    for (na, a), (nb, b) in zip(model.named_parameters(), loaded.named_parameters()):
        assert na == nb
        np.testing.assert_array_equal(a.data, b.data)
    x = rng.normal(size=(4, 128, 6))
    np.testing.assert_array_equal(model.logits(x).data, loaded.logits(x).data)


def test_file_size(saved):
    model, path = saved
    cfg = model.config
    size = path.stat().st_size
    assert size == checkpoint_size(cfg)
    # ~0.29 M parameters x 8 bytes plus a small header
    assert 0 < size - 8 * count_params(cfg) < 1024
    assert abs(size / 8 / 1e6 - 0.29) / 0.29 < 0.02


def test_corrupted_length_header(saved):
    _, path = saved
    blob = bytearray(path.read_bytes())
    struct.pack_into("<Q", blob, HEADER, 12345)
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointLengthError, match="embed.weight"):
        load_checkpoint(path)


def test_truncated(saved):
    _, path = saved
    blob = path.read_bytes()
    path.write_bytes(blob[:-100])
    with pytest.raises(CheckpointTruncatedError):
        load_checkpoint(path)
    path.write_bytes(blob[:20])
    with pytest.raises(CheckpointTruncatedError):
        load_checkpoint(path)


def test_trailing_bytes(saved):
    _, path = saved
    path.write_bytes(path.read_bytes() + b"\0" * 8)
    with pytest.raises(CheckpointLengthError):
        load_checkpoint(path)


def test_version_mismatch(saved):
    _, path = saved
    blob = bytearray(path.read_bytes())
    struct.pack_into("<I", blob, 8, FORMAT_VERSION + 1)
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointVersionError):
        load_checkpoint(path)


def test_array_count_mismatch(saved):
    _, path = saved
    blob = bytearray(path.read_bytes())
    struct.pack_into("<I", blob, HEADER - 4, 3)
    path.write_bytes(bytes(blob))
    with pytest.raises(CheckpointLengthError):
        load_checkpoint(path)


def test_not_a_checkpoint(tmp_path):
    p = tmp_path / "x.ckpt"
    p.write_bytes(b"hello world, definitely not a checkpoint file at all" * 3)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(p)


def test_errors_are_distinct():
    kinds = {CheckpointVersionError, CheckpointTruncatedError, CheckpointLengthError}
    assert len(kinds) == 3 and all(issubclass(k, CheckpointError) for k in kinds)
