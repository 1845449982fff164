"""Parameterized building blocks that read their weights from a shared ParamSet."""

from __future__ import annotations

from collections.abc import Sequence

from cdstraj.numerics import ContractViolation, ParamSet, Rng, Tensor
from cdstraj.numerics import tensor as T


class Linear:
    """``x @ weight + bias`` over the last axis; weight is (in, out)."""

    def __init__(
        self, params: ParamSet, name: str, in_dim: int, out_dim: int, rng: Rng
    ) -> None:
        self.params = params
        self.name = name
        self.in_dim = in_dim
        self.out_dim = out_dim
        params.create(f"{name}.weight", (in_dim, out_dim), "uniform", rng)
        params.create(f"{name}.bias", (out_dim,), "zeros", rng)

    @property
    def weight(self) -> Tensor:
        return self.params[f"{self.name}.weight"]

    @property
    def bias(self) -> Tensor:
        return self.params[f"{self.name}.bias"]

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim < 2 or x.shape[-1] != self.in_dim:
            raise ContractViolation(
                f"{self.name} expects (..., {self.in_dim}) input, got shape {x.shape}"
            )
        return x @ self.weight + self.bias


class MLP:
    """Linear layers with LeakyReLU between them, none after the last."""

    def __init__(
        self,
        params: ParamSet,
        name: str,
        widths: Sequence[int],
        rng: Rng,
        slope: float = 0.1,
    ) -> None:
        if len(widths) < 2:
            raise ContractViolation(f"MLP needs at least input and output widths, got {widths}")
        self.slope = slope
        self.layers = [
            Linear(params, f"{name}.{i}", widths[i], widths[i + 1], rng.split(i))
            for i in range(len(widths) - 1)
        ]

    @property
    def output_layer(self) -> Linear:
        return self.layers[-1]

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers[:-1]:
            x = T.leaky_relu(layer(x), self.slope)
        return self.layers[-1](x)


class LSTMCell:
    """
    Single LSTM cell with input, forget, cell and output gates.

    Gate pre-activations are packed as [i, f, g, o] along the last axis.
    """

    def __init__(
        self, params: ParamSet, name: str, in_dim: int, hidden_dim: int, rng: Rng
    ) -> None:
        self.params = params
        self.name = name
        self.in_dim = in_dim
        self.hidden_dim = hidden_dim
        params.create(f"{name}.weight_x", (in_dim, 4 * hidden_dim), "uniform", rng.split(0))
        params.create(f"{name}.weight_h", (hidden_dim, 4 * hidden_dim), "uniform", rng.split(1))
        params.create(f"{name}.bias", (4 * hidden_dim,), "zeros", rng)

    def __call__(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        n = self.hidden_dim
        gates = (
            x @ self.params[f"{self.name}.weight_x"]
            + h @ self.params[f"{self.name}.weight_h"]
            + self.params[f"{self.name}.bias"]
        )
        i = T.sigmoid(gates[..., 0:n])
        f = T.sigmoid(gates[..., n : 2 * n])
        g = T.tanh(gates[..., 2 * n : 3 * n])
        o = T.sigmoid(gates[..., 3 * n : 4 * n])
        c_next = f * c + i * g
        return o * T.tanh(c_next), c_next
