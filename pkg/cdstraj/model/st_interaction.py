"""
Spatio-temporal interaction encoder.

Per-frame embeddings run through a shared LSTM, the target attends to every
agent at each timestamp, the gated result attends across time, and the most
recent fused row is joined with the diffusion confidence feature.
"""

from __future__ import annotations

import math

import numpy as np
import structlog

from cdstraj.config import STSettings
from cdstraj.model.layers import Linear, LSTMCell
from cdstraj.numerics import ContractViolation, ParamSet, Rng, Tensor
from cdstraj.numerics import tensor as T

logger = structlog.get_logger(__name__)


class HeadGate:
    """S = kappa_a(x) * sigmoid(kappa_g(x)) with two independent linear layers."""

    def __init__(self, params: ParamSet, name: str, dim: int, rng: Rng) -> None:
        self.kappa_a = Linear(params, f"{name}.kappa_a", dim, dim, rng.split(0))
        self.kappa_g = Linear(params, f"{name}.kappa_g", dim, dim, rng.split(1))

    def __call__(self, heads: Tensor) -> Tensor:
        return self.kappa_a(heads) * T.sigmoid(self.kappa_g(heads))


class STInteraction:
    """Temporal encoder, spatial attention, ST fusion and confidence fusion."""

    def __init__(
        self, params: ParamSet, settings: STSettings, confidence_dim: int, rng: Rng
    ) -> None:
        self.settings = settings
        self.heads = settings.num_heads
        self.dim = settings.hidden_dim
        self.head_dim = settings.hidden_dim // settings.num_heads
        self.confidence_dim = confidence_dim
        d = self.dim

        self.embed = Linear(params, "st.embed", 2, settings.embed_dim, rng.split(0))
        if settings.temporal_enabled:
            self.temporal = LSTMCell(params, "st.temporal", settings.embed_dim, d, rng.split(1))
        else:
            self.lift = Linear(params, "st.lift", settings.embed_dim, d, rng.split(1))
        if settings.spatial_enabled:
            self.w_q = Linear(params, "st.spatial.w_q", d, d, rng.split(2))
            self.w_k = Linear(params, "st.spatial.w_k", d, d, rng.split(3))
            self.w_v = Linear(params, "st.spatial.w_v", d, d, rng.split(4))
            self.spatial_gate = HeadGate(params, "st.spatial.gate", d, rng.split(5))
        if settings.fusion_enabled:
            self.f_q = Linear(params, "st.fusion.w_q", d, d, rng.split(6))
            self.f_k = Linear(params, "st.fusion.w_k", d, d, rng.split(7))
            self.f_v = Linear(params, "st.fusion.w_v", d, d, rng.split(8))
            self.fusion_gate = HeadGate(params, "st.fusion.gate", d, rng.split(9))
        self.fuse = Linear(
            params, "st.fuse", d + confidence_dim, settings.fused_dim, rng.split(10)
        )

    def embed_state(self, positions: Tensor) -> Tensor:
        """LeakyReLU of a linear map of each (x, y) position."""
        return T.leaky_relu(self.embed(positions), self.settings.leaky_slope)

    def temporal_encode(self, embeddings: Tensor, agent_mask: np.ndarray) -> Tensor:
        """
        (B, A, T, E) embeddings -> (B, A, T, D) hidden states.

        One LSTM shared by all agents, rolled from a zero state. Rows of masked
        agents are zero.
        """
        keep = agent_mask[:, :, None, None].astype(np.float64)
        if not self.settings.temporal_enabled:
            return self.lift(embeddings) * keep
        batch, agents, frames = embeddings.shape[:3]
        h = T.zeros((batch, agents, self.dim))
        c = T.zeros((batch, agents, self.dim))
        states = []
        for t in range(frames):
            h, c = self.temporal(embeddings[:, :, t, :], h, c)
            states.append(h)
        return T.stack(states, axis=2) * keep

    def _split_heads(self, x: Tensor) -> Tensor:
        return T.reshape(x, (*x.shape[:-1], self.heads, self.head_dim))

    def spatial_weights(self, hidden: Tensor, agent_mask: np.ndarray) -> tuple[Tensor, Tensor]:
        """
        Per-timestamp attention of the target over all agents.

        Returns weights (B, T, A, heads), normalized over agents, and the value
        heads (B, T, A, heads, head_dim).
        """
        query = self._split_heads(self.w_q(hidden[:, 0]))
        by_time = T.swapaxes(hidden, 1, 2)
        keys = self._split_heads(self.w_k(by_time))
        values = self._split_heads(self.w_v(by_time))
        batch, frames = query.shape[:2]
        query = T.reshape(query, (batch, frames, 1, self.heads, self.head_dim))
        scores = T.tsum(query * keys, axis=-1) / math.sqrt(self.head_dim)
        weights = T.softmax(scores, axis=2, mask=agent_mask[:, None, :, None])
        return weights, values

    def spatial_attend(self, hidden: Tensor, agent_mask: np.ndarray) -> Tensor:
        """(B, A, T, D) temporal features -> (B, T, D) gated spatial feature S."""
        if not self.settings.spatial_enabled:
            return hidden[:, 0]
        weights, values = self.spatial_weights(hidden, agent_mask)
        batch, frames, agents = weights.shape[:3]
        mixed = T.tsum(
            T.reshape(weights, (batch, frames, agents, self.heads, 1)) * values, axis=2
        )
        return self.gate_heads(T.reshape(mixed, (batch, frames, self.dim)), self.spatial_gate)

    @staticmethod
    def gate_heads(heads: Tensor, gate: HeadGate) -> Tensor:
        return gate(heads)

    def fusion_weights(self, spatial: Tensor) -> tuple[Tensor, Tensor]:
        """Self-attention weights (B, heads, T, T) over time and value heads (B, heads, T, hd)."""
        q = T.swapaxes(self._split_heads(self.f_q(spatial)), 1, 2)
        k = T.swapaxes(self._split_heads(self.f_k(spatial)), 1, 2)
        v = T.swapaxes(self._split_heads(self.f_v(spatial)), 1, 2)
        scores = (q @ T.swapaxes(k, -1, -2)) / math.sqrt(self.head_dim)
        return T.softmax(scores, axis=-1), v

    def st_fuse(self, spatial: Tensor) -> Tensor:
        """(B, T, D) -> (B, T, D) fused feature U."""
        if not self.settings.fusion_enabled:
            return spatial
        weights, values = self.fusion_weights(spatial)
        mixed = T.swapaxes(weights @ values, 1, 2)
        batch, frames = spatial.shape[:2]
        return self.gate_heads(T.reshape(mixed, (batch, frames, self.dim)), self.fusion_gate)

    def fuse_confidence(self, fused: Tensor, confidence: Tensor | None) -> Tensor:
        """Decoder input from the last fused row and the confidence feature (zeros if absent)."""
        last = fused[:, -1]
        if confidence is None:
            confidence = T.zeros((last.shape[0], self.confidence_dim))
        if confidence.shape != (last.shape[0], self.confidence_dim):
            raise ContractViolation(
                f"confidence feature must be ({last.shape[0]}, {self.confidence_dim}), "
                f"got {confidence.shape}"
            )
        joined = T.concat([last, confidence], axis=-1)
        return T.leaky_relu(self.fuse(joined), self.settings.leaky_slope)

    def __call__(
        self,
        target_history: Tensor,
        neighbor_histories: Tensor,
        presence_mask: np.ndarray,
        confidence: Tensor | None,
    ) -> Tensor:
        """(B, 16, 2) target and (B, N, 16, 2) neighbors -> decoder input F (B, fused_dim)."""
        batch = target_history.shape[0]
        target = T.reshape(target_history, (batch, 1, *target_history.shape[1:]))
        positions = T.concat([target, neighbor_histories], axis=1)
        agent_mask = np.concatenate([np.ones((batch, 1), dtype=bool), presence_mask], axis=1)
        hidden = self.temporal_encode(self.embed_state(positions), agent_mask)
        spatial = self.spatial_attend(hidden, agent_mask)
        return self.fuse_confidence(self.st_fuse(spatial), confidence)
