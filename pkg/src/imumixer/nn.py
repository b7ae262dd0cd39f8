"""Neural building blocks: linear, layer norm, GELU, average pooling, cross-entropy."""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np
from scipy.special import ndtr

from . import tensor as T
from .errors import DegenerateAxisError, DimensionError, EmptyAxisError, LabelError
from .tensor import Tensor, make_op

LN_EPS = 1e-5
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Module:
    """Parameter container; parameters are discovered in attribute order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{key}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{key}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


class Linear(Module):
    """``y = x @ weight (+ bias)`` with weight stored as [in x out]."""

    def __init__(self, in_features: int, out_features: int, bias: bool = True, rng: np.random.Generator | None = None):
        rng = rng if rng is not None else np.random.default_rng()
        bound = 1.0 / math.sqrt(in_features)
        self.in_features = in_features
        self.out_features = out_features
        self.has_bias = bias
        self.weight = Tensor(rng.uniform(-bound, bound, size=(in_features, out_features)), requires_grad=True)
        self.bias = Tensor(np.zeros(out_features), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return linear_forward(self, x)


def linear_forward(layer: Linear, x: Tensor) -> Tensor:
    if x.shape[-1] != layer.in_features:
        raise DimensionError(
            f"linear layer expects last extent {layer.in_features}, got input shape {x.shape}"
        )
    y = T.matmul(x, layer.weight)
    if layer.has_bias:
        y = T.add(y, layer.bias)
    return y


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = LN_EPS):
        if dim < 2:
            raise DegenerateAxisError(f"layer norm over a width-{dim} axis is degenerate")
        self.dim = dim
        self.eps = eps
        self.gain = Tensor(np.ones(dim), requires_grad=True)
        self.shift = Tensor(np.zeros(dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return layernorm_forward(self, x)


def layernorm_forward(layer: LayerNorm, x: Tensor) -> Tensor:
    d = x.shape[-1]
    if d < 2:
        raise DegenerateAxisError(f"layer norm over a width-{d} axis is degenerate")
    if d != layer.dim:
        raise DimensionError(f"layer norm of width {layer.dim} got input shape {x.shape}")
    xhat, inv_std = _normalize(x.data, layer.eps)
    out = xhat * layer.gain.data + layer.shift.data
    gain = layer.gain

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        dxhat = g * gain.data
        dx = inv_std * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return make_op(out, (x, layer.gain, layer.shift), backward)


def _normalize(x: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    return centered * inv_std, inv_std


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)``."""
    cdf = ndtr(x.data)
    out = x.data * cdf

    def backward(g):
        # g * (Phi(x) + x * phi(x)), built in place
        d = np.square(x.data)
        d *= -0.5
        np.exp(d, out=d)
        d *= _INV_SQRT_2PI
        d *= x.data
        d += cdf
        d *= g
        return (d,)

    return make_op(out, (x,), backward)


def global_avg_pool(x: Tensor) -> Tensor:
    """Average over the clip axis: [..., c, h] -> [..., h]."""
    if x.ndim < 2:
        raise DimensionError(f"pooling needs rank >= 2 input, got shape {x.shape}")
    if x.shape[-2] == 0:
        raise EmptyAxisError("pooling over zero clips")
    return T.mean(x, axis=-2)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise DimensionError(f"logits must be [batch x classes], got {logits.shape}")
    b, k = logits.shape
    if labels.shape != (b,):
        raise DimensionError(f"labels shape {labels.shape} does not match batch {b}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise LabelError(f"labels must be integer class indices, got dtype {labels.dtype}")
    if b and (labels.min() < 0 or labels.max() >= k):
        raise LabelError(f"label out of range [0, {k}): {labels.min()}..{labels.max()}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(b)
    loss = np.asarray(np.mean(log_norm - z[rows, labels]))

    def backward(g):
        p = np.exp(z - log_norm[:, None])
        p[rows, labels] -= 1.0
        return (p * (float(g) / b),)

    return make_op(loss, (logits,), backward)
