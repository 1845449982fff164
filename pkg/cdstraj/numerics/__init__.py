"""Tensor core: reverse-mode differentiation, seeded sampling, optimizer."""

from cdstraj.numerics.optim import Adam, AdamState, ParamSet, adam_step
from cdstraj.numerics.rng import Rng, sample_standard_normal
from cdstraj.numerics.tensor import (
    ComputationRecord,
    ContractViolation,
    NonFiniteError,
    Tensor,
    set_debug,
)

__all__ = [
    "Adam",
    "AdamState",
    "ComputationRecord",
    "ContractViolation",
    "NonFiniteError",
    "ParamSet",
    "Rng",
    "Tensor",
    "adam_step",
    "sample_standard_normal",
    "set_debug",
]
