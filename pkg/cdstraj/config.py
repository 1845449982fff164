"""Pipeline configuration: pydantic settings per section, loaded from a JSON file."""

import json
import os
from pathlib import Path
from typing import Any, Literal

from pydantic import Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

SEED_ENV_VAR = "CDSTRAJ_SEED"
CONFIG_SECTIONS = ("data", "diffusion", "st", "decoder", "train")


class ConfigurationError(ValueError):
    """Raised for unreadable, malformed or invalid configuration, or unusable datasets."""


class DataSettings(BaseSettings):
    """Windowing, neighbor selection and synthetic traffic settings."""

    model_config = SettingsConfigDict(env_prefix="CDSTRAJ_DATA_", extra="forbid")

    n_scenes: int = Field(default=2000, ge=1, description="Synthetic scenes to generate")
    agents_per_scene: int = Field(default=3, ge=1, description="Vehicles per synthetic scene")
    n_max: int = Field(default=8, ge=1, description="Neighbor slots per window")
    radius_lat: float = Field(default=12.0, gt=0, description="Lateral neighbor radius (m)")
    radius_lon: float = Field(default=90.0, gt=0, description="Longitudinal neighbor radius (m)")
    stride: int = Field(default=41, ge=1, description="Window stride for synthetic tracks (frames)")
    csv_stride: int = Field(default=5, ge=1, description="Window stride for CSV tracks (frames)")
    source_hz: Literal[5, 10] = Field(default=10, description="Sampling rate of CSV track files")
    val_fraction: float = Field(default=0.1, ge=0, lt=1, description="Validation share of scenes")
    test_fraction: float = Field(default=0.1, ge=0, lt=1, description="Test share of scenes")
    coord_scale: float = Field(default=10.0, gt=0, description="Meters per model coordinate unit")
    noise_std: float = Field(default=0.05, ge=0, description="Synthetic position noise (m)")
    lane_change_prob: float = Field(default=0.25, ge=0, le=1, description="Share of lane changes")
    brake_prob: float = Field(default=0.15, ge=0, le=1, description="Share of braking targets")

    @model_validator(mode="after")
    def _check_shares(self) -> "DataSettings":
        if self.val_fraction + self.test_fraction >= 1.0:
            raise ValueError("val_fraction + test_fraction must leave a training share")
        if self.lane_change_prob + self.brake_prob > 1.0:
            raise ValueError("lane_change_prob + brake_prob must not exceed 1")
        return self


class DiffusionSettings(BaseSettings):
    """Characterized diffusion schedule and network widths."""

    model_config = SettingsConfigDict(env_prefix="CDSTRAJ_DIFFUSION_", extra="forbid")

    enabled: bool = Field(default=True, description="Run the diffusion branch")
    steps: int = Field(default=20, ge=1, description="Total diffusion steps")
    beta_start: float = Field(default=1e-4, gt=0, lt=1, description="First noise level")
    beta_end: float = Field(default=0.05, gt=0, lt=1, description="Last noise level")
    num_samples: int = Field(default=5, ge=1, description="Denoising units K")
    context_dim: int = Field(default=64, ge=1, description="Context embedding width")
    eps_hidden: int = Field(default=128, ge=1, description="Noise-estimator hidden width")
    step_embed_dim: int = Field(default=16, ge=2, description="Sinusoidal step embedding width")
    aggregator_hidden: int = Field(default=128, ge=1, description="Aggregator hidden width")
    aggregate: Literal["mean", "concat"] = Field(default="mean", description="Unit pooling")
    pretrain_epochs: int = Field(default=0, ge=0, description="Diffusion-only epochs first")

    @model_validator(mode="after")
    def _check_schedule(self) -> "DiffusionSettings":
        if self.beta_start > self.beta_end:
            raise ValueError("beta_start must not exceed beta_end")
        if self.step_embed_dim % 2:
            raise ValueError("step_embed_dim must be even")
        return self


class STSettings(BaseSettings):
    """Spatio-temporal interaction encoder."""

    model_config = SettingsConfigDict(env_prefix="CDSTRAJ_ST_", extra="forbid")

    embed_dim: int = Field(default=32, ge=1, description="Per-frame embedding width")
    hidden_dim: int = Field(default=64, ge=1, description="Temporal feature width D")
    num_heads: int = Field(default=4, ge=1, description="Attention heads")
    fused_dim: int = Field(default=128, ge=1, description="Decoder input width")
    leaky_slope: float = Field(default=0.1, ge=0, description="LeakyReLU negative slope")
    temporal_enabled: bool = Field(default=True, description="Recurrent temporal encoder")
    spatial_enabled: bool = Field(default=True, description="Spatial attention")
    fusion_enabled: bool = Field(default=True, description="ST fusion attention")

    @model_validator(mode="after")
    def _check_heads(self) -> "STSettings":
        if self.hidden_dim % self.num_heads:
            raise ValueError("hidden_dim must be divisible by num_heads")
        return self


class DecoderSettings(BaseSettings):
    """Maneuver-conditioned LSTM decoder."""

    model_config = SettingsConfigDict(env_prefix="CDSTRAJ_DECODER_", extra="forbid")

    hidden_dim: int = Field(default=64, ge=1, description="LSTM hidden width")
    input_dim: int = Field(default=16, ge=1, description="Feedback embedding width")
    conditioned: bool = Field(default=True, description="Maneuver heads and six modes")


class TrainSettings(BaseSettings):
    """Two-stage training parameters."""

    model_config = SettingsConfigDict(env_prefix="CDSTRAJ_TRAIN_", extra="forbid")

    stage1_epochs: int = Field(default=20, ge=0, description="MSE stage epochs")
    stage2_epochs: int = Field(default=20, ge=0, description="NLL stage epochs")
    batch_size: int = Field(default=32, ge=1, description="Windows per optimizer step")
    lr: float = Field(default=1e-3, gt=0, description="Adam learning rate")
    beta1: float = Field(default=0.9, ge=0, lt=1, description="Adam first-moment decay")
    beta2: float = Field(default=0.999, ge=0, lt=1, description="Adam second-moment decay")
    eps: float = Field(default=1e-8, gt=0, description="Adam denominator floor")
    seed: int = Field(default=0, ge=0, description="Root random seed")
    lambda_diff: float = Field(default=1.0, ge=0, description="Diffusion loss weight")
    lambda_man: float = Field(default=1.0, ge=0, description="Maneuver cross-entropy weight")
    lambda_neighbor: float = Field(default=0.1, ge=0, description="Neighbor-future MSE weight")
    plateau_switch: bool = Field(default=False, description="Switch stage on validation plateau")
    plateau_tolerance: float = Field(default=0.01, ge=0, description="Relative MSE improvement")
    plateau_patience: int = Field(default=3, ge=1, description="Epochs below tolerance")
    data_dir: str | None = Field(default=None, description="Dataset cache directory")
    debug: bool = Field(default=False, description="Assert finiteness after every operation")


class Settings(BaseSettings):
    """Root settings container, one section per JSON config key."""

    model_config = SettingsConfigDict(env_prefix="CDSTRAJ_", extra="ignore")

    data: DataSettings = Field(default_factory=DataSettings)
    diffusion: DiffusionSettings = Field(default_factory=DiffusionSettings)
    st: STSettings = Field(default_factory=STSettings)
    decoder: DecoderSettings = Field(default_factory=DecoderSettings)
    train: TrainSettings = Field(default_factory=TrainSettings)

    def to_json_dict(self) -> dict[str, Any]:
        return {section: getattr(self, section).model_dump() for section in CONFIG_SECTIONS}


def settings_from_dict(raw: dict[str, Any], apply_seed_override: bool = True) -> Settings:
    """
    Validate a config mapping section by section.

    Values given in ``raw`` win over ``CDSTRAJ_<SECTION>_*`` environment
    variables; ``CDSTRAJ_SEED`` then replaces ``train.seed`` unless
    ``apply_seed_override`` is False.
    """
    unknown = sorted(set(raw) - set(CONFIG_SECTIONS))
    if unknown:
        raise ConfigurationError(f"unknown config keys: {unknown}")
    for section in CONFIG_SECTIONS:
        if not isinstance(raw.get(section, {}), dict):
            raise ConfigurationError(f"config section {section!r} must be a JSON object")
    try:
        sections = {
            "data": DataSettings(**raw.get("data", {})),
            "diffusion": DiffusionSettings(**raw.get("diffusion", {})),
            "st": STSettings(**raw.get("st", {})),
            "decoder": DecoderSettings(**raw.get("decoder", {})),
            "train": TrainSettings(**raw.get("train", {})),
        }
    except ValidationError as e:
        raise ConfigurationError(str(e)) from e

    seed = os.environ.get(SEED_ENV_VAR) if apply_seed_override else None
    if seed is not None:
        try:
            seed_value = int(seed)
        except ValueError:
            raise ConfigurationError(f"{SEED_ENV_VAR} must be an integer, got {seed!r}") from None
        if seed_value < 0:
            raise ConfigurationError(f"{SEED_ENV_VAR} must be non-negative, got {seed_value}")
        sections["train"] = sections["train"].model_copy(update={"seed": seed_value})
    return Settings(**sections)


def load_settings(path: str | Path | None = None) -> Settings:
    """Read the JSON config at ``path`` (defaults only when None)."""
    if path is None:
        return settings_from_dict({})
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigurationError(f"cannot read config {path}: {e}") from e
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"config {path} is not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigurationError(f"config {path} must hold a JSON object")
    return settings_from_dict(raw)
