"""Named parameter storage and the adaptive-moment optimizer."""

from __future__ import annotations

from collections.abc import Iterator, Mapping
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import structlog

from cdstraj.numerics.rng import Rng
from cdstraj.numerics.tensor import ContractViolation, Tensor

logger = structlog.get_logger(__name__)

Initializer = Literal["uniform", "zeros"]


class ParamSet(Mapping[str, Tensor]):
    """
    Dotted-name registry of learnable tensors.

    Names are unique and shapes are fixed at creation; updates swap in a new
    immutable tensor of the same shape.
    """

    def __init__(self) -> None:
        self._tensors: dict[str, Tensor] = {}
        self._initializers: dict[str, Initializer] = {}

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self._tensors[name]
        except KeyError:
            raise ContractViolation(f"unknown parameter {name!r}") from None

    def __contains__(self, name: object) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def create(self, name: str, shape: tuple[int, ...], init: Initializer, rng: Rng) -> Tensor:
        """Register a parameter; weights are uniform in +-sqrt(1/fan_in), biases zero."""
        if name in self._tensors:
            raise ContractViolation(f"parameter {name!r} already exists")
        if init == "zeros":
            values = np.zeros(shape)
        else:
            bound = np.sqrt(1.0 / shape[0])
            values = rng.uniform(-bound, bound, shape)
        tensor = Tensor(values, requires_grad=True, name=name)
        self._tensors[name] = tensor
        self._initializers[name] = init
        return tensor

    def assign(self, name: str, values: np.ndarray) -> None:
        current = self[name]
        values = np.asarray(values, dtype=np.float64)
        if values.shape != current.shape:
            raise ContractViolation(
                f"parameter {name!r} has shape {current.shape}, got {values.shape}"
            )
        self._tensors[name] = Tensor(values, requires_grad=True, name=name)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {name: t.shape for name, t in self._tensors.items()}

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.numpy() for name, t in self._tensors.items()}

    def load_arrays(self, arrays: Mapping[str, np.ndarray]) -> None:
        for name, values in arrays.items():
            self.assign(name, values)

    def count(self) -> int:
        return sum(t.size for t in self._tensors.values())


@dataclass
class AdamState:
    """First/second moment estimates and the number of steps taken."""

    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: ParamSet,
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> ParamSet:
    """Apply one bias-corrected Adam update in place and return ``params``."""
    t = state.step + 1
    for name, grad in grads.items():
        param = params[name]
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != param.shape:
            raise ContractViolation(
                f"gradient for {name!r} has shape {grad.shape}, parameter is {param.shape}"
            )
        m = beta1 * state.m.get(name, np.zeros(param.shape)) + (1.0 - beta1) * grad
        v = beta2 * state.v.get(name, np.zeros(param.shape)) + (1.0 - beta2) * grad * grad
        state.m[name] = m
        state.v[name] = v
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        params.assign(name, param.data - lr * m_hat / (np.sqrt(v_hat) + eps))
    state.step = t
    return params


class Adam:
    """Adam optimizer bound to one parameter set."""

    def __init__(
        self,
        params: ParamSet,
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        state: AdamState | None = None,
    ) -> None:
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = state or AdamState()

    def step(self, grads: Mapping[str, np.ndarray]) -> None:
        missing = set(self.params) - set(grads)
        if missing:
            raise ContractViolation(f"gradients missing for {sorted(missing)}")
        adam_step(self.params, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)
