"""Model components and the end-to-end pipeline."""

from cdstraj.model.decoder import ManeuverDistribution, ModeTrajectory, MultiModalPrediction
from cdstraj.model.diffusion import NoiseSchedule, make_schedule
from cdstraj.model.pipeline import AblationConfig, CDSTrajModel, ModelOutput

__all__ = [
    "AblationConfig",
    "CDSTrajModel",
    "ManeuverDistribution",
    "ModeTrajectory",
    "ModelOutput",
    "MultiModalPrediction",
    "NoiseSchedule",
    "make_schedule",
]
