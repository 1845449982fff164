"""Maneuver classification heads and the Gaussian LSTM rollout."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from cdstraj.config import DecoderSettings
from cdstraj.model.layers import Linear, LSTMCell
from cdstraj.numerics import ContractViolation, ParamSet, Rng, Tensor
from cdstraj.numerics import tensor as T
from cdstraj.scenario_data import FUTURE_FRAMES, LAT_CLASSES, LON_CLASSES

SIGMA_MIN = 1e-3
SIGMA_MAX = 1e3
RHO_LIMIT = 0.999
ONE_HOT_WIDTH = len(LAT_CLASSES) + len(LON_CLASSES)
MODE_COUNT = len(LAT_CLASSES) * len(LON_CLASSES)


def mode_index(lat: int, lon: int) -> int:
    """Flat index of a (lateral, longitudinal) mode, lateral-major."""
    return lat * len(LON_CLASSES) + lon


def mode_labels(index: int) -> tuple[int, int]:
    return divmod(index, len(LON_CLASSES))


def mode_name(index: int) -> str:
    lat, lon = mode_labels(index)
    return f"{LAT_CLASSES[lat]}/{LON_CLASSES[lon]}"


def maneuver_one_hot(lat: np.ndarray, lon: np.ndarray) -> np.ndarray:
    """(B,) label arrays -> (B, 5) concatenated one-hots."""
    lat = np.asarray(lat)
    lon = np.asarray(lon)
    out = np.zeros((lat.size, ONE_HOT_WIDTH))
    out[np.arange(lat.size), lat] = 1.0
    out[np.arange(lon.size), len(LAT_CLASSES) + lon] = 1.0
    return out


@dataclass(frozen=True)
class ManeuverDistribution:
    """Lateral (B, 3) and longitudinal (B, 2) class probabilities."""

    p_lat: Tensor
    p_lon: Tensor

    def mode_probs(self) -> Tensor:
        """Outer product flattened to (B, 6), lateral-major."""
        batch = self.p_lat.shape[0]
        joint = T.reshape(self.p_lat, (batch, len(LAT_CLASSES), 1)) * T.reshape(
            self.p_lon, (batch, 1, len(LON_CLASSES))
        )
        return T.reshape(joint, (batch, MODE_COUNT))


@dataclass(frozen=True)
class ModeTrajectory:
    """Per-step bivariate Gaussians: mu, sigma (B, 25, 2) in meters and rho (B, 25)."""

    mu: Tensor
    sigma: Tensor
    rho: Tensor


@dataclass(frozen=True, eq=False)
class MultiModalPrediction:
    """
    Trajectories of every decoded mode for one window, in the window's frame.

    ``means`` and ``sigmas`` are (M, 25, 2), ``rhos`` (M, 25), ``mode_probs``
    (M,). M is 6 for the maneuver-conditioned decoder and 1 otherwise.
    """

    means: np.ndarray
    sigmas: np.ndarray
    rhos: np.ndarray
    mode_probs: np.ndarray
    p_lat: np.ndarray | None = None
    p_lon: np.ndarray | None = None

    @property
    def num_modes(self) -> int:
        return int(self.mode_probs.size)

    def best_mode(self) -> int:
        return int(np.argmax(self.mode_probs))

    def mean_of(self, mode: int | None = None) -> np.ndarray:
        return self.means[self.best_mode() if mode is None else mode]


class Decoder:
    """
    Maneuver heads on F, and an LSTM rolled out 25 steps per mode.

    The initial hidden state is tanh of a linear map of concat(F, one-hot);
    each step's input is a linear map of the previous mean (the origin before
    the first step). Means are produced in model units and scaled to meters.
    """

    def __init__(
        self,
        params: ParamSet,
        settings: DecoderSettings,
        feature_dim: int,
        coord_scale: float,
        rng: Rng,
    ) -> None:
        self.settings = settings
        self.conditioned = settings.conditioned
        self.hidden_dim = settings.hidden_dim
        self.scale = coord_scale
        if self.conditioned:
            self.lat_head = Linear(
                params, "decoder.lat", feature_dim, len(LAT_CLASSES), rng.split(0)
            )
            self.lon_head = Linear(
                params, "decoder.lon", feature_dim, len(LON_CLASSES), rng.split(1)
            )
        self.init = Linear(
            params, "decoder.init", feature_dim + ONE_HOT_WIDTH, settings.hidden_dim, rng.split(2)
        )
        self.feedback = Linear(params, "decoder.feedback", 2, settings.input_dim, rng.split(3))
        self.cell = LSTMCell(
            params, "decoder.lstm", settings.input_dim, settings.hidden_dim, rng.split(4)
        )
        self.out = Linear(params, "decoder.out", settings.hidden_dim, 5, rng.split(5))

    @property
    def num_modes(self) -> int:
        return MODE_COUNT if self.conditioned else 1

    def maneuver_probs(self, features: Tensor) -> ManeuverDistribution:
        if not self.conditioned:
            raise ContractViolation("maneuver heads are disabled in the unconditioned decoder")
        return ManeuverDistribution(
            p_lat=T.softmax(self.lat_head(features), axis=-1),
            p_lon=T.softmax(self.lon_head(features), axis=-1),
        )

    def output_transform(self, raw: Tensor) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        """(B, 5) raw outputs -> model-unit mean, meter mean, sigma, rho."""
        mu_units = raw[:, 0:2]
        log_sigma = T.clamp(
            raw[:, 2:4] + math.log(self.scale), math.log(SIGMA_MIN), math.log(SIGMA_MAX)
        )
        return mu_units, mu_units * self.scale, T.exp(log_sigma), RHO_LIMIT * T.tanh(raw[:, 4])

    def decode_mode(self, features: Tensor, one_hot: np.ndarray) -> ModeTrajectory:
        """
        Roll out one mode per batch row.

        ``one_hot`` is (5,) for all rows or (B, 5) per row.
        """
        batch = features.shape[0]
        one_hot = np.broadcast_to(np.asarray(one_hot, dtype=np.float64), (batch, ONE_HOT_WIDTH))
        h = T.tanh(self.init(T.concat([features, one_hot], axis=-1)))
        c = T.zeros((batch, self.hidden_dim))
        previous = T.zeros((batch, 2))
        means, sigmas, rhos = [], [], []
        for _ in range(FUTURE_FRAMES):
            h, c = self.cell(self.feedback(previous), h, c)
            previous, mu, sigma, rho = self.output_transform(self.out(h))
            means.append(mu)
            sigmas.append(sigma)
            rhos.append(rho)
        return ModeTrajectory(
            mu=T.stack(means, axis=1), sigma=T.stack(sigmas, axis=1), rho=T.stack(rhos, axis=1)
        )

    def decode_all(self, features: Tensor) -> list[ModeTrajectory]:
        """Every mode in flat-index order; a single mode with a zero one-hot when unconditioned."""
        if not self.conditioned:
            return [self.decode_mode(features, np.zeros(ONE_HOT_WIDTH))]
        trajectories = []
        for index in range(MODE_COUNT):
            lat, lon = mode_labels(index)
            trajectories.append(
                self.decode_mode(features, maneuver_one_hot(np.array([lat]), np.array([lon]))[0])
            )
        return trajectories
