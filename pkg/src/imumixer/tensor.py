"""Dense float64 tensors with a tape-based reverse-mode gradient engine.

Values live in row-major ``numpy`` arrays. Operations executed while a
:class:`GradTape` is active (and touching at least one tensor that requires a
gradient) are appended to the tape together with a closure that maps the
upstream gradient to gradients for each operand. ``GradTape.backward`` replays
those closures in reverse order.

Outside a tape nothing is recorded, which is the inference path.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from .errors import DimensionError, EmptyAxisError, NonFiniteError, RankError, TapeError

DTYPE = np.float64

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """An n-dimensional float64 array plus optional gradient slot.

    Tensors are treated as immutable. The one exception is a parameter
    (``requires_grad=True`` leaf), whose ``data`` the optimizer rewrites in
    place between forward passes.
    """

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=DTYPE)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def check_finite(self, what: str | None = None) -> "Tensor":
        if not np.all(np.isfinite(self.data)):
            label = what or self.name or "tensor"
            bad = int(np.size(self.data) - np.count_nonzero(np.isfinite(self.data)))
            raise NonFiniteError(f"{label} has {bad} non-finite element(s)", name=label)
        return self

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(_wrap(other), -1.0))

    def __rsub__(self, other):
        return add(_wrap(other), scale(self, -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def as_tensor(x) -> Tensor:
    return _wrap(x)


class GradTape:
    """Ordered record of the primitive operations of one forward pass.

    Use as a context manager; tapes nest, and only the innermost one records.
    A tape can be replayed exactly once.
    """

    _stack: list["GradTape"] = []

    def __init__(self):
        self._nodes: list[tuple[Tensor, tuple[Tensor, ...], BackwardFn]] = []
        self._used = False

    def __enter__(self) -> "GradTape":
        if self._used:
            raise TapeError("tape already consumed by backward(); run a new forward pass")
        GradTape._stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        GradTape._stack.remove(self)

    def __len__(self) -> int:
        return len(self._nodes)

    @classmethod
    def active(cls) -> "GradTape | None":
        return cls._stack[-1] if cls._stack else None

    def record(self, out: Tensor, parents: tuple[Tensor, ...], fn: BackwardFn) -> None:
        self._nodes.append((out, parents, fn))

    def backward(self, loss: Tensor, upstream: np.ndarray | None = None) -> None:
        """Propagate d(loss) back through the tape into every leaf's ``grad``.

        Leaf gradients are reset to zero first, so the result reflects this
        pass only.
        """
        if self._used:
            raise TapeError("tape already consumed by backward(); run a new forward pass")
        self._used = True
        if upstream is None:
            if loss.size != 1:
                raise DimensionError(f"backward needs a scalar loss or explicit upstream, got shape {loss.shape}")
            upstream = np.ones_like(loss.data)
        else:
            upstream = np.asarray(upstream, dtype=DTYPE)
            if upstream.shape != loss.shape:
                raise DimensionError(f"upstream shape {upstream.shape} does not match {loss.shape}")

        produced = {id(out) for out, _, _ in self._nodes}
        leaves: dict[int, Tensor] = {}
        for _, parents, _ in self._nodes:
            for p in parents:
                if p.requires_grad and id(p) not in produced:
                    leaves[id(p)] = p
        for leaf in leaves.values():
            leaf.grad = np.zeros_like(leaf.data)

        grads: dict[int, np.ndarray] = {id(loss): upstream}
        for out, parents, fn in reversed(self._nodes):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for p, pg in zip(parents, fn(g)):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                if key in leaves:
                    p.grad += pg
                elif key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        self._nodes.clear()


def _needs_record(*tensors: Tensor) -> GradTape | None:
    tape = GradTape.active()
    if tape is None:
        return None
    if any(t.requires_grad for t in tensors):
        return tape
    return None


def make_op(data: np.ndarray, parents: tuple[Tensor, ...], backward: BackwardFn) -> Tensor:
    """Wrap ``data`` as the output of a primitive, registering ``backward`` if recording."""
    tape = _needs_record(*parents)
    out = Tensor(data, requires_grad=tape is not None)
    if tape is not None:
        tape.record(out, parents, backward)
    return out


# MAC accounting hook used by the FLOP oracle.
_mac_counters: list[list[int]] = []


@contextlib.contextmanager
def count_macs() -> Iterator[list[int]]:
    """Count multiply-accumulates performed by ``matmul`` inside the block.

    Yields a one-element list whose entry is updated in place.
    """
    box = [0]
    _mac_counters.append(box)
    try:
        yield box
    finally:
        _mac_counters.remove(box)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"shapes {a.shape} and {b.shape} are not broadcast-compatible") from None


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes (leading axes broadcast)."""
    if a.ndim < 2 or b.ndim < 2:
        raise RankError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    if b.ndim == 2 and a.ndim > 2:
        # fold leading axes so a single GEMM does the work
        lead = a.shape[:-1]
        a2 = a.data.reshape(-1, a.shape[-1])
        out = (a2 @ b.data).reshape(*lead, b.shape[-1])
    else:
        out = np.matmul(a.data, b.data)
    if _mac_counters:
        macs = int(np.prod(out.shape)) * a.shape[-1]
        for box in _mac_counters:
            box[0] += macs

    def backward(g):
        if b.ndim == 2 and a.ndim > 2:
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ b.data.T).reshape(a.shape) if a.requires_grad else None
            gb = a.data.reshape(-1, a.shape[-1]).T @ g2 if b.requires_grad else None
            return ga, gb
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape) if b.requires_grad else None
        return ga, gb

    return make_op(out, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    if a.ndim < 2:
        raise RankError(f"transpose needs rank >= 2, got shape {a.shape}")
    out = np.ascontiguousarray(np.swapaxes(a.data, -1, -2))
    return make_op(out, (a,), lambda g: (np.swapaxes(g, -1, -2),))


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b)
    out = a.data + b.data
    return make_op(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_shape(a, b)
    out = a.data * b.data

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_op(out, (a, b), backward)


def scale(a: Tensor, k: float) -> Tensor:
    return make_op(a.data * k, (a,), lambda g: (g * k,))


def _check_axis(a: Tensor, axis: int) -> int:
    if not -a.ndim <= axis < a.ndim:
        raise RankError(f"axis {axis} out of range for shape {a.shape}")
    return axis % a.ndim


def mean(a: Tensor, axis: int) -> Tensor:
    axis = _check_axis(a, axis)
    n = a.shape[axis]
    if n == 0:
        raise EmptyAxisError(f"mean over empty axis {axis} of shape {a.shape}")
    out = a.data.mean(axis=axis)

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axis) / n, a.shape).copy(),)

    return make_op(out, (a,), backward)


def sum_all(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum())
    return make_op(out, (a,), lambda g: (np.full(a.shape, float(g)),))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {a.shape} to {tuple(shape)}") from None
    return make_op(out, (a,), lambda g: (g.reshape(a.shape),))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    if not tensors:
        raise DimensionError("concat of zero tensors")
    ref = tensors[0]
    axis = _check_axis(ref, axis)
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(
            t.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != axis
        ):
            raise DimensionError(f"cannot concatenate {ref.shape} with {t.shape} along axis {axis}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(
            np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:])
        )

    return make_op(out, tuple(tensors), backward)
