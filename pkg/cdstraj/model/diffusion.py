"""
Characterized diffusion over neighbor futures.

Neighbor futures are noised forward with a linear-beta schedule and recovered
by a K-member reverse chain whose noise estimator is conditioned on an
embedding of the observed histories. An aggregation MLP turns the denoised
ensemble into predicted neighbor futures and a confidence feature.

Tensors here are in model units (meters divided by ``coord_scale``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import structlog

from cdstraj.config import DiffusionSettings
from cdstraj.model.layers import MLP, Linear
from cdstraj.numerics import ContractViolation, ParamSet, Rng, Tensor
from cdstraj.numerics import tensor as T
from cdstraj.scenario_data import FUTURE_FRAMES

logger = structlog.get_logger(__name__)

UNIT_WIDTH = FUTURE_FRAMES * 2


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Per-step coefficients; arrays are indexed by step - 1."""

    steps: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    def _index(self, step: int) -> int:
        if not 1 <= step <= self.steps:
            raise ContractViolation(f"diffusion step must be in [1, {self.steps}], got {step}")
        return step - 1

    def alpha(self, step: int) -> float:
        return float(self.alphas[self._index(step)])

    def alpha_bar(self, step: int) -> float:
        return float(self.alpha_bars[self._index(step)])


def make_schedule(
    steps: int = 20, beta_start: float = 1e-4, beta_end: float = 0.05
) -> NoiseSchedule:
    """Linearly spaced betas from ``beta_start`` to ``beta_end``."""
    if steps < 1:
        raise ContractViolation(f"schedule needs at least one step, got {steps}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ContractViolation(
            f"schedule needs 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )
    betas = np.linspace(beta_start, beta_end, steps)
    alphas = 1.0 - betas
    return NoiseSchedule(steps, betas, alphas, np.cumprod(alphas))


@dataclass(frozen=True)
class DiffusedUnit:
    """Neighbor futures at a forward diffusion step; step 0 is the clean unit."""

    values: Tensor
    step: int


@dataclass(frozen=True)
class DenoiseEnsemble:
    """K reverse-chain members stacked on axis 0, all at the same step."""

    units: Tensor
    step: int
    member_keys: tuple[int, ...]

    @property
    def size(self) -> int:
        return len(self.member_keys)

    def permuted(self, order: np.ndarray) -> DenoiseEnsemble:
        order = np.asarray(order)
        return DenoiseEnsemble(
            units=Tensor(self.units.data[order]),
            step=self.step,
            member_keys=tuple(self.member_keys[int(i)] for i in order),
        )


def forward_diffuse(
    unit: DiffusedUnit, step: int, noise: Tensor, schedule: NoiseSchedule
) -> DiffusedUnit:
    """Closed-form marginal sqrt(abar)*C0 + sqrt(1 - abar)*eps."""
    if unit.step != 0:
        raise ContractViolation(f"forward_diffuse starts from a clean unit, got step {unit.step}")
    if noise.shape != unit.values.shape:
        raise ContractViolation(f"noise shape {noise.shape} differs from unit {unit.values.shape}")
    alpha_bar = schedule.alpha_bar(step)
    values = math.sqrt(alpha_bar) * unit.values + math.sqrt(1.0 - alpha_bar) * noise
    return DiffusedUnit(values, step)


def step_diffuse(unit: DiffusedUnit, noise: Tensor, schedule: NoiseSchedule) -> DiffusedUnit:
    """One forward step from ``unit.step`` to ``unit.step + 1``."""
    if noise.shape != unit.values.shape:
        raise ContractViolation(f"noise shape {noise.shape} differs from unit {unit.values.shape}")
    step = unit.step + 1
    alpha = schedule.alpha(step)
    values = math.sqrt(alpha) * unit.values + math.sqrt(1.0 - alpha) * noise
    return DiffusedUnit(values, step)


def init_denoise_units(
    count: int, rng: Rng, shape: tuple[int, ...], schedule: NoiseSchedule
) -> DenoiseEnsemble:
    """``count`` standard-normal members at step Gamma, member k drawn from ``rng.split(k)``."""
    if count < 1:
        raise ContractViolation(f"ensemble needs at least one member, got {count}")
    units = np.stack([rng.split(k).standard_normal(shape) for k in range(count)])
    return DenoiseEnsemble(Tensor(units), schedule.steps, tuple(range(count)))


def denoise_step(
    unit: Tensor,
    eps_theta: Tensor,
    z: Tensor | None,
    schedule: NoiseSchedule,
    step: int,
) -> Tensor:
    """
    Move a reverse-chain unit from ``step + 1`` to ``step``.

    Uses the coefficients of the step being undone; no noise is added when
    ``step`` is 0 or ``z`` is None.
    """
    if not 0 <= step <= schedule.steps - 1:
        raise ContractViolation(f"denoise step must be in [0, {schedule.steps - 1}], got {step}")
    alpha = schedule.alpha(step + 1)
    alpha_bar = schedule.alpha_bar(step + 1)
    coeff = (1.0 - alpha) / math.sqrt(1.0 - alpha_bar)
    out = (unit - coeff * eps_theta) / math.sqrt(alpha)
    if step > 0 and z is not None:
        out = out + math.sqrt(1.0 - alpha) * z
    return out


def step_embedding(steps: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal features of integer steps, shape (len(steps), dim)."""
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    angles = np.asarray(steps, dtype=np.float64)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


@dataclass(frozen=True)
class DiffusionOutput:
    neighbor_futures: Tensor
    confidence: Tensor
    ensemble: Tensor


class ContextEncoder:
    """Per-frame embedding, self-attention over time, masked pooling, projection."""

    def __init__(self, params: ParamSet, dim: int, rng: Rng) -> None:
        self.dim = dim
        self.embed = Linear(params, "diffusion.context.embed", 2, dim, rng.split(0))
        self.query = Linear(params, "diffusion.context.query", dim, dim, rng.split(1))
        self.key = Linear(params, "diffusion.context.key", dim, dim, rng.split(2))
        self.value = Linear(params, "diffusion.context.value", dim, dim, rng.split(3))
        self.out = Linear(params, "diffusion.context.out", dim, dim, rng.split(4))

    def __call__(self, histories: Tensor, agent_mask: np.ndarray) -> Tensor:
        """
        histories: (B, A, T, 2) with the target at agent index 0.
        agent_mask: (B, A) booleans. Returns (B, dim).
        """
        keep = agent_mask[:, :, None, None].astype(np.float64)
        x = self.embed(histories * keep)
        q, k, v = self.query(x), self.key(x), self.value(x)
        scores = (q @ T.swapaxes(k, -1, -2)) / math.sqrt(self.dim)
        attended = T.softmax(scores, axis=-1) @ v
        frames = histories.shape[2]
        count = agent_mask.sum(axis=1).astype(np.float64) * frames
        pooled = T.tsum(attended * keep, axis=(1, 2)) / count[:, None]
        return self.out(pooled)


def encode_context(
    encoder: ContextEncoder,
    target_history: Tensor,
    neighbor_histories: Tensor,
    presence_mask: np.ndarray,
) -> Tensor:
    """Context embedding of (B, 16, 2) target and (B, N, 16, 2) neighbor histories."""
    batch = target_history.shape[0]
    target = T.reshape(target_history, (batch, 1, *target_history.shape[1:]))
    histories = T.concat([target, neighbor_histories], axis=1)
    agent_mask = np.concatenate([np.ones((batch, 1), dtype=bool), presence_mask], axis=1)
    return encoder(histories, agent_mask)


class EpsilonNet:
    """Noise estimator applied to each neighbor's flattened future."""

    def __init__(
        self, params: ParamSet, settings: DiffusionSettings, rng: Rng, slope: float = 0.1
    ) -> None:
        self.embed_dim = settings.step_embed_dim
        self.context_dim = settings.context_dim
        width = UNIT_WIDTH + settings.context_dim + settings.step_embed_dim
        self.mlp = MLP(
            params,
            "diffusion.eps",
            [width, settings.eps_hidden, settings.eps_hidden, UNIT_WIDTH],
            rng,
            slope,
        )

    def __call__(self, units: Tensor, context: Tensor, steps: np.ndarray) -> Tensor:
        """
        units: (M, N, 25, 2); context: (M, D_ctx); steps: (M,) values in [1, Gamma].
        """
        rows, neighbors = units.shape[0], units.shape[1]
        flat = T.reshape(units, (rows, neighbors, UNIT_WIDTH))
        ctx = T.broadcast_to(
            T.reshape(context, (rows, 1, self.context_dim)), (rows, neighbors, self.context_dim)
        )
        emb = np.broadcast_to(
            step_embedding(steps, self.embed_dim)[:, None, :], (rows, neighbors, self.embed_dim)
        )
        out = self.mlp(T.concat([flat, ctx, emb], axis=-1))
        return T.reshape(out, units.shape)


class Aggregator:
    """Pools the denoised ensemble and maps each neighbor to its predicted future."""

    def __init__(
        self, params: ParamSet, settings: DiffusionSettings, rng: Rng, slope: float = 0.1
    ) -> None:
        self.mode = settings.aggregate
        self.samples = settings.num_samples
        self.hidden_dim = settings.aggregator_hidden
        self.slope = slope
        width = UNIT_WIDTH * (self.samples if self.mode == "concat" else 1)
        self.hidden = Linear(
            params, "diffusion.aggregate.hidden", width, self.hidden_dim, rng.split(0)
        )
        self.out = Linear(
            params, "diffusion.aggregate.out", self.hidden_dim, UNIT_WIDTH, rng.split(1)
        )

    def pool(self, ensemble: Tensor) -> Tensor:
        """(K, B, N, 25, 2) -> (B, N, width)."""
        count, batch, neighbors = ensemble.shape[:3]
        if self.mode == "mean":
            return T.reshape(T.mean(ensemble, axis=0), (batch, neighbors, UNIT_WIDTH))
        if count != self.samples:
            raise ContractViolation(f"concat pooling expects {self.samples} members, got {count}")
        moved = T.transpose(ensemble, (1, 2, 0, 3, 4))
        return T.reshape(moved, (batch, neighbors, count * UNIT_WIDTH))

    def __call__(self, ensemble: Tensor, presence_mask: np.ndarray) -> tuple[Tensor, Tensor]:
        """Returns predicted futures (B, N, 25, 2) and the confidence feature (B, hidden)."""
        batch, neighbors = ensemble.shape[1], ensemble.shape[2]
        hidden = T.leaky_relu(self.hidden(self.pool(ensemble)), self.slope)
        futures = T.reshape(self.out(hidden), (batch, neighbors, FUTURE_FRAMES, 2))
        keep = presence_mask[:, :, None].astype(np.float64)
        count = np.maximum(presence_mask.sum(axis=1), 1).astype(np.float64)
        confidence = T.tsum(hidden * keep, axis=1) / count[:, None]
        return futures, confidence


class CharacterizedDiffusion:
    """Context encoder, noise estimator and aggregator sharing one schedule."""

    def __init__(
        self, params: ParamSet, settings: DiffusionSettings, rng: Rng, slope: float = 0.1
    ) -> None:
        self.settings = settings
        self.schedule = make_schedule(settings.steps, settings.beta_start, settings.beta_end)
        self.context = ContextEncoder(params, settings.context_dim, rng.split(0))
        self.eps_net = EpsilonNet(params, settings, rng.split(1), slope)
        self.aggregator = Aggregator(params, settings, rng.split(2), slope)

    @property
    def confidence_dim(self) -> int:
        return self.settings.aggregator_hidden

    def estimate_epsilon(self, units: Tensor, context: Tensor, step: int) -> Tensor:
        """eps_theta for units at ``step`` (1..Gamma) sharing one step value."""
        if not 1 <= step <= self.schedule.steps:
            raise ContractViolation(
                f"noise estimate step must be in [1, {self.schedule.steps}], got {step}"
            )
        return self.eps_net(units, context, np.full(units.shape[0], step))

    def reverse_chain(
        self, ensemble: DenoiseEnsemble, context: Tensor, rng: Rng
    ) -> Tensor:
        """
        Run every member from step Gamma down to 0.

        ``ensemble.units`` is (K, B, N, 25, 2) and ``context`` is (B, D_ctx).
        Member with key m draws its step-d noise from ``rng.split(m).split(d)``.
        """
        if ensemble.step != self.schedule.steps:
            raise ContractViolation(
                f"reverse chain starts at step {self.schedule.steps}, got {ensemble.step}"
            )
        count = ensemble.size
        unit_shape = ensemble.units.shape[1:]
        batch = unit_shape[0]
        rows = count * batch
        ctx = T.reshape(
            T.broadcast_to(
                T.reshape(context, (1, batch, self.settings.context_dim)),
                (count, batch, self.settings.context_dim),
            ),
            (rows, self.settings.context_dim),
        )
        units = T.reshape(ensemble.units, (rows, *unit_shape[1:]))
        for step in range(self.schedule.steps - 1, -1, -1):
            eps = self.estimate_epsilon(units, ctx, step + 1)
            z = None
            if step > 0:
                draws = [
                    rng.split(key).split(step).standard_normal(unit_shape)
                    for key in ensemble.member_keys
                ]
                z = Tensor(np.concatenate(draws))
            units = denoise_step(units, eps, z, self.schedule, step)
        return T.reshape(units, ensemble.units.shape)

    def __call__(
        self,
        target_history: Tensor,
        neighbor_histories: Tensor,
        presence_mask: np.ndarray,
        rng: Rng,
    ) -> DiffusionOutput:
        """Sample, denoise and aggregate neighbor futures for a batch."""
        context = encode_context(self.context, target_history, neighbor_histories, presence_mask)
        shape = (target_history.shape[0], presence_mask.shape[1], FUTURE_FRAMES, 2)
        ensemble = init_denoise_units(self.settings.num_samples, rng.split(0), shape, self.schedule)
        denoised = self.reverse_chain(ensemble, context, rng.split(1))
        futures, confidence = self.aggregator(denoised, presence_mask)
        return DiffusionOutput(futures, confidence, denoised)

    def loss(
        self,
        target_history: Tensor,
        neighbor_histories: Tensor,
        neighbor_futures: np.ndarray,
        presence_mask: np.ndarray,
        rng: Rng,
    ) -> Tensor:
        """
        Noise-matching objective on present neighbors.

        Each batch row draws one step uniformly from [1, Gamma]; the result is
        the mean squared error over present coordinates, 0 without neighbors.
        """
        present = presence_mask.sum()
        if present == 0:
            return T.zeros(())
        batch = neighbor_futures.shape[0]
        steps = rng.split(0).integers(1, self.schedule.steps + 1, (batch,))
        noise = rng.split(1).standard_normal(neighbor_futures.shape)
        alpha_bar = self.schedule.alpha_bars[steps - 1][:, None, None, None]
        noised = np.sqrt(alpha_bar) * neighbor_futures + np.sqrt(1.0 - alpha_bar) * noise
        context = encode_context(self.context, target_history, neighbor_histories, presence_mask)
        eps = self.eps_net(Tensor(noised), context, steps)
        keep = presence_mask[:, :, None, None].astype(np.float64)
        sq = T.square(eps - noise) * keep
        return T.tsum(sq) / float(present * UNIT_WIDTH)
