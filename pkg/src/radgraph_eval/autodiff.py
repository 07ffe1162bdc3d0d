"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

A thread-local Tape records primitive operations in execution order; a single
backward pass over the reversed tape accumulates gradients into every
recorded input. Values are plain numpy arrays, so forward evaluation without
an active tape has no recording overhead (used by finite differencing).
"""

from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

_STATE = threading.local()


def _tape_stack() -> list["Tape"]:
    if not hasattr(_STATE, "stack"):
        _STATE.stack = []
    return _STATE.stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """Dense float64 array with an optional gradient slot."""

    __slots__ = ("values", "grad")

    def __init__(self, values, check_finite: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        if check_finite and not np.all(np.isfinite(self.values)):
            raise ValueError("tensor ingestion rejected: non-finite entries")
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        return float(self.values)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.values.shape})"

    # Operator sugar; everything routes through the primitive functions so
    # the tape sees a uniform op stream.
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))


def tensor(values, check_finite: bool = True) -> Tensor:
    """Public ingestion point: rejects NaN/Inf."""
    return Tensor(values, check_finite=check_finite)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of primitive ops; usable as a context manager."""

    def __init__(self):
        self._records: list[tuple[tuple[Tensor, ...], Tensor, Callable]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _tape_stack().pop()

    def __len__(self) -> int:
        return len(self._records)

    def record(self, inputs: tuple[Tensor, ...], output: Tensor,
               backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> None:
        self._records.append((inputs, output, backward))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(input) into .grad of every recorded input."""
        if loss.values.size != 1:
            raise ValueError("backward requires a scalar-valued output")
        loss.grad = np.ones_like(loss.values)
        for inputs, output, backward_fn in reversed(self._records):
            if output.grad is None:
                continue
            grads = backward_fn(output.grad)
            for inp, g in zip(inputs, grads):
                if g is None:
                    continue
                if inp.grad is None:
                    inp.grad = np.zeros_like(inp.values)
                inp.grad += g


def _record(inputs: tuple[Tensor, ...], out_values: np.ndarray,
            backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]) -> Tensor:
    out = Tensor(out_values)
    tape = active_tape()
    if tape is not None:
        tape.record(inputs, out, backward)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum-reduce a broadcast gradient back to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    return _record((a, b), a.values + b.values,
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _record((a, b), a.values - b.values,
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _record((a, b), a.values * b.values,
                   lambda g: (_unbroadcast(g * b.values, a.shape),
                              _unbroadcast(g * a.values, b.shape)))


def div(a: Tensor, b: Tensor) -> Tensor:
    return _record((a, b), a.values / b.values,
                   lambda g: (_unbroadcast(g / b.values, a.shape),
                              _unbroadcast(-g * a.values / (b.values ** 2), b.shape)))


def neg(a: Tensor) -> Tensor:
    return _record((a,), -a.values, lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 2 or b.values.ndim != 2:
        raise ValueError(f"matmul expects 2-d operands, got {a.shape} @ {b.shape}")
    return _record((a, b), a.values @ b.values,
                   lambda g: (g @ b.values.T, a.values.T @ g))


def transpose(a: Tensor) -> Tensor:
    return _record((a,), a.values.T.copy(), lambda g: (g.T,))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    return _record((a,), a.values.reshape(shape), lambda g: (g.reshape(old),))


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = tuple(parts)
    sizes = [p.values.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(parts, np.concatenate([p.values for p in parts], axis=axis), backward)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    def backward(g):
        full = np.zeros_like(a.values)
        full[start:stop] = g
        return (full,)

    return _record((a,), a.values[start:stop].copy(), backward)


def take_row(a: Tensor, index: int) -> Tensor:
    """Row lookup that keeps a leading axis of size 1 (embedding fetch)."""

    def backward(g):
        full = np.zeros_like(a.values)
        full[index] += g[0]
        return (full,)

    return _record((a,), a.values[index:index + 1].copy(), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.values > 0
    return _record((a,), np.where(mask, a.values, 0.0), lambda g: (g * mask,))


def sigmoid(a: Tensor) -> Tensor:
    out = np.where(a.values >= 0,
                   1.0 / (1.0 + np.exp(-np.abs(a.values))),
                   np.exp(-np.abs(a.values)) / (1.0 + np.exp(-np.abs(a.values))))
    return _record((a,), out, lambda g: (g * out * (1.0 - out),))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.values)
    return _record((a,), out, lambda g: (g * (1.0 - out ** 2),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.values)
    return _record((a,), out, lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _record((a,), np.log(a.values), lambda g: (g / a.values,))


def power(a: Tensor, exponent: float) -> Tensor:
    out = a.values ** exponent
    return _record((a,), out,
                   lambda g: (g * exponent * a.values ** (exponent - 1.0),))


def clip(a: Tensor, low: float, high: float) -> Tensor:
    mask = (a.values > low) & (a.values < high)
    return _record((a,), np.clip(a.values, low, high), lambda g: (g * mask,))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.values - a.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _record((a,), out, backward)


def sum_(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    out = a.values.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record((a,), out, backward)


def mean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    count = a.values.size if axis is None else a.values.shape[axis]
    out = a.values.mean(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy() / count,)

    return _record((a,), out, backward)


def feature_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization over the feature axis with learned scale/shift.

    Composed from primitives so the backward pass needs no bespoke rule.
    """
    mu = mean(x, axis=1, keepdims=True)
    centered = sub(x, mu)
    var = mean(mul(centered, centered), axis=1, keepdims=True)
    std = power(add(var, Tensor(np.full(var.shape, eps))), 0.5)
    normed = div(centered, std)
    return add(mul(normed, gamma), beta)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x @ weight.T + bias, the row-feature convention used throughout."""
    out = matmul(x, transpose(weight))
    if bias is not None:
        out = add(out, bias)
    return out


# ---------------------------------------------------------------------------
# gradient verification


def grad_check(fn: Callable[[], Tensor], inputs: Sequence[Tensor],
               epsilon: float = 1e-5, max_coords_per_input: int | None = None,
               seed: int = 0, atol: float = 1e-9) -> float:
    """Max relative error between tape gradients and central differences.

    `fn` must re-read `inputs` each call and return a scalar Tensor. With
    `max_coords_per_input` set, a seeded subsample of coordinates is probed
    per input (full check otherwise). Differences below `atol` count as
    exact: for coordinates whose true derivative is zero (e.g. a bias under
    softmax shift invariance) the central difference is cancellation noise
    and the relative form would amplify it.
    """
    for t in inputs:
        t.zero_grad()
    with Tape() as tape:
        out = fn()
        if out.values.size != 1:
            raise ValueError("grad_check requires a scalar-valued computation")
        tape.backward(out)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for t in inputs:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.values)
        flat = t.values.reshape(-1)
        n = flat.size
        if max_coords_per_input is not None and n > max_coords_per_input:
            coords = rng.choice(n, size=max_coords_per_input, replace=False)
        else:
            coords = range(n)
        for idx in coords:
            original = flat[idx]
            flat[idx] = original + epsilon
            up = float(fn().values)
            flat[idx] = original - epsilon
            down = float(fn().values)
            flat[idx] = original
            numeric = (up - down) / (2.0 * epsilon)
            a = float(analytic.reshape(-1)[idx])
            diff = abs(a - numeric)
            if diff < atol:
                continue
            err = diff / max(1e-8, abs(a) + abs(numeric))
            if err > worst:
                worst = err
    return worst
