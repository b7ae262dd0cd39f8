"""MLP-Mixer classification of smartwatch IMU windows and a mask-wearing reminder loop."""

__version__ = "0.1.0"

from .model import MixerConfig, MixerModel, count_flops, count_params, resolve_variant  # noqa: E402
from .tensor import GradTape, Tensor  # noqa: E402

__all__ = [
    "GradTape",
    "MixerConfig",
    "MixerModel",
    "Tensor",
    "count_flops",
    "count_params",
    "resolve_variant",
]
