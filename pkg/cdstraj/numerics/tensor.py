"""Dense float64 tensors with reverse-mode automatic differentiation.

Operations executed while a ``ComputationRecord`` is active are appended to it
in execution order, which is already a topological order. Outside a record,
tensors are plain immutable values and nothing is tracked.
"""

from __future__ import annotations

from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass
from typing import Any

import numpy as np
import structlog

logger = structlog.get_logger(__name__)


class ContractViolation(ValueError):
    """Raised when an operation's pre-condition does not hold."""


class NonFiniteError(ContractViolation):
    """Raised when a tensor would hold NaN or Inf."""


_DEBUG = False
_ACTIVE: list[ComputationRecord] = []

Gradient = np.ndarray | None
VectorJacobian = Callable[[np.ndarray], Sequence[Gradient]]


def set_debug(enabled: bool) -> None:
    """Toggle finiteness assertions after every operation."""
    global _DEBUG
    _DEBUG = enabled


def debug_enabled() -> bool:
    return _DEBUG


def _frozen(array: np.ndarray) -> np.ndarray:
    array.flags.writeable = False
    return array


class Tensor:
    """An n-dimensional float64 array that may take part in a computation record."""

    __slots__ = ("data", "requires_grad", "node_id", "name")
    __array_ufunc__ = None

    def __init__(self, data: Any, requires_grad: bool = False, name: str | None = None) -> None:
        array = np.array(data, dtype=np.float64)
        if any(extent <= 0 for extent in array.shape):
            raise ContractViolation(f"tensor extents must be positive, got shape {array.shape}")
        if not np.isfinite(array).all():
            raise NonFiniteError(f"tensor {name or ''} holds NaN or Inf values".strip())
        self.data = _frozen(array)
        self.requires_grad = requires_grad
        self.node_id: int | None = None
        self.name = name

    @classmethod
    def _wrap(cls, array: np.ndarray) -> Tensor:
        out = cls.__new__(cls)
        out.data = _frozen(np.asarray(array, dtype=np.float64))
        out.requires_grad = False
        out.node_id = None
        out.name = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def values(self) -> np.ndarray:
        """Flat row-major view of the elements."""
        return self.data.ravel()

    @property
    def tracked(self) -> bool:
        return self.requires_grad or self.node_id is not None

    def numpy(self) -> np.ndarray:
        return np.array(self.data)

    def item(self) -> float:
        if self.size != 1:
            raise ContractViolation(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    def __add__(self, other: Any) -> Tensor:
        return add(self, other)

    def __radd__(self, other: Any) -> Tensor:
        return add(other, self)

    def __sub__(self, other: Any) -> Tensor:
        return sub(self, other)

    def __rsub__(self, other: Any) -> Tensor:
        return sub(other, self)

    def __mul__(self, other: Any) -> Tensor:
        return mul(self, other)

    def __rmul__(self, other: Any) -> Tensor:
        return mul(other, self)

    def __truediv__(self, other: Any) -> Tensor:
        return div(self, other)

    def __rtruediv__(self, other: Any) -> Tensor:
        return div(other, self)

    def __neg__(self) -> Tensor:
        return neg(self)

    def __matmul__(self, other: Any) -> Tensor:
        return matmul(self, other)

    def __getitem__(self, index: Any) -> Tensor:
        return getitem(self, index)


@dataclass
class RecordedOp:
    """One primitive operation: its inputs, output and vector-Jacobian rule."""

    name: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    vjp: VectorJacobian


class ComputationRecord:
    """
    Ordered list of the primitive operations of one forward pass.

    A record belongs to a single worker. Use it as a context manager around the
    forward computation, then call ``backward``.
    """

    def __init__(self) -> None:
        self.ops: list[RecordedOp] = []

    def __enter__(self) -> ComputationRecord:
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc: object) -> None:
        _ACTIVE.remove(self)

    def __len__(self) -> int:
        return len(self.ops)

    def record(
        self, name: str, inputs: tuple[Tensor, ...], output: Tensor, vjp: VectorJacobian
    ) -> None:
        output.node_id = len(self.ops)
        self.ops.append(RecordedOp(name, inputs, output, vjp))

    def backward(self, loss: Tensor, params: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
        """
        Reverse pass from a scalar loss.

        Returns one gradient per named parameter; parameters the loss does not
        depend on get zeros.
        """
        if loss.size != 1:
            raise ContractViolation(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        if loss.node_id is not None:
            if loss.node_id >= len(self.ops) or self.ops[loss.node_id].output is not loss:
                raise ContractViolation("loss was not produced inside this computation record")
            for op in reversed(self.ops[: loss.node_id + 1]):
                upstream = grads.pop(id(op.output), None)
                if upstream is None:
                    continue
                for source, grad in zip(op.inputs, op.vjp(upstream), strict=True):
                    if grad is None or not source.tracked:
                        continue
                    key = id(source)
                    grads[key] = grads[key] + grad if key in grads else grad
        return {
            name: np.array(grads.get(id(param), np.zeros_like(param.data)))
            for name, param in params.items()
        }


def _active_record() -> ComputationRecord | None:
    return _ACTIVE[-1] if _ACTIVE else None


def as_tensor(value: Any) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor._wrap(np.array(value, dtype=np.float64))


def _result(
    name: str, array: np.ndarray, inputs: tuple[Tensor, ...], vjp: VectorJacobian
) -> Tensor:
    if _DEBUG and not np.isfinite(array).all():
        raise NonFiniteError(f"{name} produced NaN or Inf")
    out = Tensor._wrap(array)
    record = _active_record()
    if record is not None and any(t.tracked for t in inputs):
        record.record(name, inputs, out, vjp)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(name: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError as e:
        raise ContractViolation(f"{name}: shapes {a.shape} and {b.shape} do not broadcast") from e


def add(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    return _result(
        "add",
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    return _result(
        "sub",
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    return _result(
        "mul",
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a: Any, b: Any) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    if np.any(b.data == 0.0):
        raise ContractViolation("div: divisor contains zeros")
    quotient = a.data / b.data
    return _result(
        "div",
        quotient,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * quotient / b.data, b.shape),
        ),
    )


def neg(a: Any) -> Tensor:
    a = as_tensor(a)
    return _result("neg", -a.data, (a,), lambda g: (-g,))


def matmul(a: Any, b: Any) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ContractViolation(f"matmul needs at least 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ContractViolation(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError as e:
        raise ContractViolation(f"matmul batch extents differ: {a.shape} @ {b.shape}") from e

    def vjp(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        grad_a = g @ np.swapaxes(b.data, -1, -2)
        grad_b = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(grad_a, a.shape), _unbroadcast(grad_b, b.shape)

    return _result("matmul", a.data @ b.data, (a, b), vjp)


def exp(a: Any) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _result("exp", out, (a,), lambda g: (g * out,))


def log(a: Any) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0.0):
        raise ContractViolation("log: input must be strictly positive")
    return _result("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a: Any) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0.0):
        raise ContractViolation("sqrt: input must be strictly positive")
    out = np.sqrt(a.data)
    return _result("sqrt", out, (a,), lambda g: (g / (2.0 * out),))


def square(a: Any) -> Tensor:
    a = as_tensor(a)
    return _result("square", a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def tanh(a: Any) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _result("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Any) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _result("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def leaky_relu(a: Any, slope: float = 0.1) -> Tensor:
    a = as_tensor(a)
    positive = a.data >= 0.0
    return _result(
        "leaky_relu",
        np.where(positive, a.data, slope * a.data),
        (a,),
        lambda g: (np.where(positive, g, slope * g),),
    )


def clamp(a: Any, low: float, high: float) -> Tensor:
    if low > high:
        raise ContractViolation(f"clamp bounds reversed: [{low}, {high}]")
    a = as_tensor(a)
    inside = (a.data >= low) & (a.data <= high)
    return _result("clamp", np.clip(a.data, low, high), (a,), lambda g: (g * inside,))


def tsum(a: Any, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g: np.ndarray) -> tuple[np.ndarray]:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result("sum", np.asarray(out), (a,), vjp)


def mean(a: Any, axis: int | tuple[int, ...] | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return tsum(a, axis=axis, keepdims=keepdims) / float(count)


def reshape(a: Any, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError as e:
        raise ContractViolation(f"cannot reshape {a.shape} into {shape}") from e
    return _result("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Any, axes: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    if sorted(axes) != list(range(a.ndim)):
        raise ContractViolation(f"transpose axes {axes} invalid for shape {a.shape}")
    inverse = tuple(int(i) for i in np.argsort(axes))
    return _result("transpose", a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def swapaxes(a: Any, axis1: int, axis2: int) -> Tensor:
    a = as_tensor(a)
    return _result(
        "swapaxes",
        np.swapaxes(a.data, axis1, axis2),
        (a,),
        lambda g: (np.swapaxes(g, axis1, axis2),),
    )


def broadcast_to(a: Any, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError as e:
        raise ContractViolation(f"cannot broadcast {a.shape} to {shape}") from e
    return _result("broadcast_to", out, (a,), lambda g: (_unbroadcast(g, a.shape),))


def concat(parts: Sequence[Any], axis: int = -1) -> Tensor:
    tensors = tuple(as_tensor(p) for p in parts)
    if not tensors:
        raise ContractViolation("concat needs at least one tensor")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        shapes = [t.shape for t in tensors]
        raise ContractViolation(f"concat shapes incompatible on axis {axis}: {shapes}") from e
    offsets = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _result(
        "concat", out, tensors, lambda g: tuple(np.split(g, offsets, axis=axis))
    )


def stack(parts: Sequence[Any], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(p) for p in parts)
    if not tensors:
        raise ContractViolation("stack needs at least one tensor")
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as e:
        shapes = [t.shape for t in tensors]
        raise ContractViolation(f"stack shapes differ: {shapes}") from e
    return _result(
        "stack",
        out,
        tensors,
        lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(tensors))),
    )


def getitem(a: Any, index: Any) -> Tensor:
    a = as_tensor(a)
    out = np.array(a.data[index])
    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(p, (int, slice)) or p is Ellipsis or p is None for p in parts)

    def vjp(g: np.ndarray) -> tuple[np.ndarray]:
        full = np.zeros(a.shape)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _result("getitem", out, (a,), vjp)


def softmax(a: Any, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """
    Shift-stabilized softmax along ``axis``.

    Entries where ``mask`` is False get weight exactly 0, the finite form of a
    -inf logit. Every slice must keep at least one unmasked entry.
    """
    a = as_tensor(a)
    if not -a.ndim <= axis < a.ndim:
        raise ContractViolation(f"softmax axis {axis} invalid for shape {a.shape}")
    if mask is None:
        shifted = a.data - a.data.max(axis=axis, keepdims=True)
        weights = np.exp(shifted)
    else:
        keep = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
        if not keep.any(axis=axis).all():
            raise ContractViolation("softmax slice has every entry masked")
        masked = np.where(keep, a.data, -np.inf)
        shifted = masked - masked.max(axis=axis, keepdims=True)
        weights = np.where(keep, np.exp(shifted), 0.0)
    probs = weights / weights.sum(axis=axis, keepdims=True)

    def vjp(g: np.ndarray) -> tuple[np.ndarray]:
        return (probs * (g - (g * probs).sum(axis=axis, keepdims=True)),)

    return _result("softmax", probs, (a,), vjp)


def zeros(shape: tuple[int, ...]) -> Tensor:
    return Tensor._wrap(np.zeros(shape))


def backward(loss: Tensor, params: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    """Run the reverse pass on the record that produced ``loss``."""
    record = _active_record()
    if record is None:
        raise ContractViolation("backward needs an active computation record")
    return record.backward(loss, params)
