"""Central finite differences, used as the oracle for reverse-mode gradients."""

from __future__ import annotations

from collections.abc import Callable

import numpy as np

from cdstraj.numerics.optim import ParamSet
from cdstraj.numerics.rng import Rng
from cdstraj.numerics.tensor import ContractViolation


def finite_diff_grad(
    f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """Estimate df/dx coordinate by coordinate as (f(x+h e) - f(x-h e)) / 2h."""
    if h <= 0:
        raise ContractViolation(f"step must be positive, got {h}")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + h
        upper = f(x)
        flat[i] = saved - h
        lower = f(x)
        flat[i] = saved
        out[i] = (upper - lower) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, atol: float = 1e-8) -> np.ndarray:
    """|a - n| / max(|a|, |n|), with near-zero pairs judged by ``atol``."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    return np.where(diff <= atol, 0.0, diff / np.maximum(scale, atol))


def sampled_param_check(
    loss_fn: Callable[[ParamSet], float],
    params: ParamSet,
    analytic: dict[str, np.ndarray],
    rng: Rng,
    coords_per_param: int = 3,
    h: float = 1e-5,
    atol: float = 1e-8,
) -> dict[str, float]:
    """
    Finite-difference a few random coordinates of every parameter.

    Returns the worst relative error per parameter name. ``loss_fn`` must be
    deterministic in the parameter values. Pairs closer than ``atol`` count as
    exact.
    """
    worst: dict[str, float] = {}
    for key, name in enumerate(sorted(params)):
        original = params[name].numpy()
        flat_count = original.size
        picks = rng.split(key).permutation(flat_count)[: min(coords_per_param, flat_count)]
        errors = []
        for index in picks:
            position = np.unravel_index(int(index), original.shape)

            def at(value: float, position: tuple[int, ...] = position) -> float:
                probe = original.copy()
                probe[position] = value
                params.assign(name, probe)
                return loss_fn(params)

            base = original[position]
            numeric = (at(base + h) - at(base - h)) / (2.0 * h)
            params.assign(name, original)
            errors.append(float(relative_error(analytic[name][position], numeric, atol)))
        worst[name] = max(errors)
    return worst
