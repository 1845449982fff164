"""Shared fixtures: a model small enough to train in a few seconds."""

import copy

import pytest

from cdstraj.config import Settings, settings_from_dict
from cdstraj.numerics import Rng
from cdstraj.scenario_data import DatasetSplit, synth_generate

TINY_CONFIG = {
    "data": {
        "n_scenes": 10,
        "agents_per_scene": 2,
        "n_max": 2,
        "val_fraction": 0.2,
        "test_fraction": 0.2,
    },
    "diffusion": {
        "steps": 3,
        "num_samples": 2,
        "context_dim": 4,
        "eps_hidden": 8,
        "step_embed_dim": 4,
        "aggregator_hidden": 4,
    },
    "st": {"embed_dim": 4, "hidden_dim": 8, "num_heads": 2, "fused_dim": 8},
    "decoder": {"hidden_dim": 8, "input_dim": 4},
    "train": {"stage1_epochs": 1, "stage2_epochs": 1, "batch_size": 4, "seed": 3},
}


def _tiny_settings(**sections) -> Settings:
    """Tiny settings with per-section field overrides, e.g. ``train={"lr": 0.01}``."""
    raw = copy.deepcopy(TINY_CONFIG)
    for name, fields in sections.items():
        raw.setdefault(name, {}).update(fields)
    return settings_from_dict(raw, apply_seed_override=False)


@pytest.fixture
def tiny_config() -> dict:
    return copy.deepcopy(TINY_CONFIG)


@pytest.fixture
def make_settings():
    """Factory fixture for tiny settings with overrides."""
    return _tiny_settings


@pytest.fixture
def settings() -> Settings:
    return _tiny_settings()


@pytest.fixture
def split(settings) -> DatasetSplit:
    data = settings.data
    return synth_generate(Rng(settings.train.seed), data.n_scenes, data.agents_per_scene, data)
