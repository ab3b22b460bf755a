"""Minimal deterministic reverse-mode autodiff on numpy arrays.

A ``Tape`` records every differentiable operation executed while it is
active (thread-local, so utterances can run forward/backward in parallel
on separate tapes). ``backward`` replays the tape in reverse exactly once.
All math is plain numpy; float64 is the reference dtype, float32 is the
fast training path.
"""

from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import NumericError, ShapeError, UsageError

_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = []
        _local.tapes = stack
    return stack


def active_tape() -> Optional["Tape"]:
    """The innermost tape on this thread, or None when recording is off."""
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """An n-d float array plus an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64 if not isinstance(data, np.ndarray) else data.dtype)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def assert_finite(self, context: str = "") -> "Tensor":
        if not np.all(np.isfinite(self.data)):
            raise NumericError(f"non-finite values in tensor {self.name or context or '<unnamed>'}")
        return self

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad}, name={self.name!r})"


class Node:
    """One recorded operation: inputs, output, and a vjp callback."""

    __slots__ = ("inputs", "output", "vjp")

    def __init__(self, inputs: Sequence[Tensor], output: Tensor, vjp: Callable):
        self.inputs = tuple(inputs)
        self.output = output
        self.vjp = vjp


class Tape:
    """Ordered record of operations; consumed by exactly one backward pass."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.used = False

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        popped = _tape_stack().pop()
        assert popped is self
        return False


def record(inputs: Sequence[Tensor], out_data: np.ndarray, vjp: Callable, name: str = "") -> Tensor:
    """Create the output tensor of an op, recording it if a tape is active.

    ``vjp(grad_out)`` must return one gradient array (or None) per input,
    in order.
    """
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs, name=name)
    tape = active_tape()
    if tape is not None and needs:
        tape.nodes.append(Node(inputs, out, vjp))
    return out


def backward(loss: Tensor, tape: Tape, into_grad: bool = True) -> dict:
    """Run reverse-mode accumulation for a scalar loss over a tape.

    Returns a dict mapping each requires_grad leaf tensor to its gradient
    array. When ``into_grad`` the gradients are also added into each
    tensor's ``.grad`` buffer (not thread-safe across shared parameters;
    batch runners pass into_grad=False and reduce in a fixed order).
    """
    if loss.data.ndim != 0 and loss.data.size != 1:
        raise UsageError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    if tape.used:
        raise UsageError("tape already consumed by a previous backward pass")
    tape.used = True

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    produced = {id(node.output) for node in tape.nodes}
    for node in reversed(tape.nodes):
        g_out = grads.pop(id(node.output), None)
        if g_out is None:
            continue  # branch not on the path to the loss
        in_grads = node.vjp(g_out)
        for tensor, g in zip(node.inputs, in_grads):
            if g is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in grads:
                grads[key] = grads[key] + g
            else:
                grads[key] = g

    # what's left are leaves (tensors never produced by a recorded op)
    leaf_grads: dict[Tensor, np.ndarray] = {}
    seen = set()
    for node in tape.nodes:
        for tensor in node.inputs:
            if id(tensor) in seen or id(tensor) in produced:
                continue
            seen.add(id(tensor))
            if tensor.requires_grad and id(tensor) in grads:
                leaf_grads[tensor] = grads[id(tensor)]
    if loss.requires_grad and id(loss) not in produced and loss not in leaf_grads:
        leaf_grads[loss] = np.ones_like(loss.data)

    if into_grad:
        for tensor, g in leaf_grads.items():
            if tensor.grad is None:
                tensor.grad = g.copy()
            else:
                tensor.grad = tensor.grad + g
    return leaf_grads


# ---------------------------------------------------------------------------
# primitive ops


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient g down to `shape` (reverses numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return record([a, b], out, vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return record([a, b], out, vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data

    def vjp(g):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return record([a, b], out, vjp)


def scale(a: Tensor, c: float) -> Tensor:
    def vjp(g):
        return (g * c,)

    return record([a], a.data * c, vjp)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return record([a, b], out, vjp)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    out = np.where(mask, a.data, 0)

    def vjp(g):
        return (g * mask,)

    return record([a], out, vjp)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def vjp(g):
        return (g * (1.0 - out * out),)

    return record([a], out, vjp)


def sigmoid(a: Tensor) -> Tensor:
    out = 1.0 / (1.0 + np.exp(-a.data))

    def vjp(g):
        return (g * out * (1.0 - out),)

    return record([a], out, vjp)


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    out = a.data.mean()

    def vjp(g):
        return (np.full_like(a.data, g / n),)

    return record([a], out, vjp)


def total(a: Tensor) -> Tensor:
    out = a.data.sum()

    def vjp(g):
        return (np.full_like(a.data, g),)

    return record([a], out, vjp)


def square(a: Tensor) -> Tensor:
    out = a.data * a.data

    def vjp(g):
        return (g * 2.0 * a.data,)

    return record([a], out, vjp)


def mse(pred: Tensor, target: Tensor) -> Tensor:
    """Mean over all elements of the squared difference."""
    if pred.data.shape != target.data.shape:
        raise ShapeError(f"mse shape mismatch: {pred.data.shape} vs {target.data.shape}")
    diff = pred.data - target.data
    n = diff.size
    out = np.asarray((diff * diff).mean())

    def vjp(g):
        c = g * 2.0 / n
        return c * diff, -c * diff

    return record([pred, target], out, vjp)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return record(list(tensors), out, vjp)


def reshape(a: Tensor, shape: tuple) -> Tensor:
    orig = a.data.shape

    def vjp(g):
        return (g.reshape(orig),)

    return record([a], a.data.reshape(shape), vjp)


def mean_axes(a: Tensor, axes: tuple) -> Tensor:
    """Mean over the given axes (dropping them)."""
    out = a.data.mean(axis=axes)
    n = 1
    for ax in axes:
        n *= a.data.shape[ax]

    def vjp(g):
        return (np.broadcast_to(np.expand_dims(g, axes), a.data.shape) / n,)

    return record([a], out, vjp)


def log_softmax(a: Tensor) -> Tensor:
    """Row-wise log-softmax over the last axis, stable via max-subtraction."""
    m = a.data.max(axis=-1, keepdims=True)
    shifted = a.data - m
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse

    def vjp(g):
        p = np.exp(out)
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return record([a], out, vjp)
