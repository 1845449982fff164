"""End-to-end model: diffusion, ST interaction and decoder over one ParamSet."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import structlog

from cdstraj.config import Settings
from cdstraj.model.decoder import (
    ONE_HOT_WIDTH,
    Decoder,
    ManeuverDistribution,
    ModeTrajectory,
    MultiModalPrediction,
    maneuver_one_hot,
)
from cdstraj.model.diffusion import CharacterizedDiffusion, DiffusionOutput
from cdstraj.model.st_interaction import STInteraction
from cdstraj.numerics import ParamSet, Rng, Tensor
from cdstraj.scenario_data import ScenarioWindow, WindowBatch

logger = structlog.get_logger(__name__)


@dataclass(frozen=True)
class AblationConfig:
    """Which components run; ``F`` enables everything."""

    name: str
    diffusion: bool = True
    temporal: bool = True
    spatial: bool = True
    fusion: bool = True
    conditioning: bool = True

    @classmethod
    def table(cls) -> list[AblationConfig]:
        """Rows A-F: one component disabled per row, all enabled in F."""
        return [
            cls("A", diffusion=False),
            cls("B", temporal=False),
            cls("C", spatial=False),
            cls("D", fusion=False),
            cls("E", conditioning=False),
            cls("F"),
        ]

    @property
    def disabled(self) -> list[str]:
        flags = {
            "characterized_diffusion": self.diffusion,
            "temporal_encoder": self.temporal,
            "spatial_encoder": self.spatial,
            "st_fusion": self.fusion,
            "decoder_conditioning": self.conditioning,
        }
        return [name for name, enabled in flags.items() if not enabled]

    def apply(self, settings: Settings) -> Settings:
        return settings.model_copy(
            update={
                "diffusion": settings.diffusion.model_copy(update={"enabled": self.diffusion}),
                "st": settings.st.model_copy(
                    update={
                        "temporal_enabled": self.temporal,
                        "spatial_enabled": self.spatial,
                        "fusion_enabled": self.fusion,
                    }
                ),
                "decoder": settings.decoder.model_copy(update={"conditioned": self.conditioning}),
            }
        )


@dataclass(frozen=True)
class ModelOutput:
    """
    One forward pass over a batch.

    Training passes carry ``label_mode``, the mode selected by each row's
    maneuver labels (the single mode when unconditioned). Prediction passes
    carry ``modes``, every mode in flat-index order.
    """

    features: Tensor
    maneuvers: ManeuverDistribution | None
    label_mode: ModeTrajectory | None
    modes: list[ModeTrajectory] | None
    diffusion: DiffusionOutput | None
    neighbor_futures: Tensor | None


class CDSTrajModel:
    """Owns the parameters and wires the components together; coordinates are meters."""

    def __init__(self, settings: Settings, seed: int | None = None) -> None:
        self.settings = settings
        self.seed = settings.train.seed if seed is None else seed
        self.scale = settings.data.coord_scale
        self.params = ParamSet()
        init = Rng(self.seed).split(0)
        slope = settings.st.leaky_slope

        self.diffusion: CharacterizedDiffusion | None = None
        if settings.diffusion.enabled:
            self.diffusion = CharacterizedDiffusion(
                self.params, settings.diffusion, init.split(0), slope
            )
        self.st = STInteraction(
            self.params, settings.st, settings.diffusion.aggregator_hidden, init.split(1)
        )
        self.decoder = Decoder(
            self.params, settings.decoder, settings.st.fused_dim, self.scale, init.split(2)
        )
        logger.debug("Model built", parameters=self.params.count(), tensors=len(self.params))

    @property
    def num_modes(self) -> int:
        return self.decoder.num_modes

    def scaled_inputs(self, batch: WindowBatch) -> tuple[Tensor, Tensor, np.ndarray]:
        return (
            Tensor(batch.target_history / self.scale),
            Tensor(batch.neighbor_histories / self.scale),
            batch.presence_mask,
        )

    def forward(self, batch: WindowBatch, rng: Rng, all_modes: bool = False) -> ModelOutput:
        """Run every enabled component; decode label modes, plus all modes if asked."""
        target, neighbors, mask = self.scaled_inputs(batch)
        diffusion_out = None
        neighbor_futures = None
        confidence = None
        if self.diffusion is not None:
            diffusion_out = self.diffusion(target, neighbors, mask, rng.split(0))
            neighbor_futures = diffusion_out.neighbor_futures * self.scale
            confidence = diffusion_out.confidence
        features = self.st(target, neighbors, mask, confidence)

        maneuvers = None
        if self.decoder.conditioned:
            maneuvers = self.decoder.maneuver_probs(features)
        if all_modes:
            modes = self.decoder.decode_all(features)
            return ModelOutput(
                features, maneuvers, None, modes, diffusion_out, neighbor_futures
            )
        if self.decoder.conditioned:
            label_hot = maneuver_one_hot(batch.lat_labels, batch.lon_labels)
        else:
            label_hot = np.zeros((batch.size, ONE_HOT_WIDTH))
        label_mode = self.decoder.decode_mode(features, label_hot)
        return ModelOutput(features, maneuvers, label_mode, None, diffusion_out, neighbor_futures)

    def predict_batch(
        self, windows: Sequence[ScenarioWindow], rng: Rng | None = None
    ) -> list[MultiModalPrediction]:
        """Multi-modal predictions for each window, deterministic given ``rng``."""
        rng = rng or Rng(self.seed).split(1)
        batch = WindowBatch.from_windows(windows)
        out = self.forward(batch, rng, all_modes=True)
        assert out.modes is not None
        means = np.stack([m.mu.numpy() for m in out.modes], axis=1)
        sigmas = np.stack([m.sigma.numpy() for m in out.modes], axis=1)
        rhos = np.stack([m.rho.numpy() for m in out.modes], axis=1)
        if out.maneuvers is not None:
            probs = out.maneuvers.mode_probs().numpy()
            p_lat = out.maneuvers.p_lat.numpy()
            p_lon = out.maneuvers.p_lon.numpy()
        else:
            probs = np.ones((batch.size, 1))
            p_lat = p_lon = None
        return [
            MultiModalPrediction(
                means=means[i],
                sigmas=sigmas[i],
                rhos=rhos[i],
                mode_probs=probs[i],
                p_lat=None if p_lat is None else p_lat[i],
                p_lon=None if p_lon is None else p_lon[i],
            )
            for i in range(batch.size)
        ]

    def predict_full(self, window: ScenarioWindow, rng: Rng | None = None) -> MultiModalPrediction:
        """Diffusion, ST encoding, maneuver heads and every mode rollout for one window."""
        return self.predict_batch([window], rng)[0]

    def predict_many(
        self, windows: Sequence[ScenarioWindow], batch_size: int = 64, rng: Rng | None = None
    ) -> list[MultiModalPrediction]:
        """``predict_batch`` over chunks; chunk c samples from ``rng.split(c)``."""
        rng = rng or Rng(self.seed).split(1)
        predictions: list[MultiModalPrediction] = []
        for chunk, start in enumerate(range(0, len(windows), batch_size)):
            predictions.extend(
                self.predict_batch(windows[start : start + batch_size], rng.split(chunk))
            )
        return predictions
