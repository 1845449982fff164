"""RMSE by horizon, reference predictors, maneuver accuracy and the ablation harness."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import polars as pl
import structlog

from cdstraj.config import Settings
from cdstraj.model.pipeline import AblationConfig, CDSTrajModel
from cdstraj.numerics import ContractViolation
from cdstraj.scenario_data import (
    FRAME_HZ,
    FUTURE_FRAMES,
    LAT_KEEP,
    LON_BRAKING,
    DatasetSplit,
    ScenarioWindow,
    dataset_hash,
)
from cdstraj.training import restore_model, train_two_stage

logger = structlog.get_logger(__name__)

HORIZONS_S = (1, 2, 3, 4, 5)
REPORT_COLUMNS = ["model", "horizon_s", "rmse_m", "n_samples", "dataset", "data_hash"]
REPORT_HEADER = "# rmse at closing frame of each horizon"


@dataclass(frozen=True)
class HorizonReport:
    """RMSE (m) at the frame closing each horizon, one entry per second."""

    model: str
    rmse: tuple[float, ...]
    n_samples: int
    dataset: str = ""
    data_hash: str = ""

    def at(self, horizon_s: int) -> float:
        return self.rmse[HORIZONS_S.index(horizon_s)]

    def rows(self) -> list[tuple[str, int, float, int, str, str]]:
        return [
            (self.model, horizon, value, self.n_samples, self.dataset, self.data_hash)
            for horizon, value in zip(HORIZONS_S, self.rmse, strict=True)
        ]


def rmse_by_horizon(
    predictions: np.ndarray | Sequence[np.ndarray],
    truths: np.ndarray | Sequence[np.ndarray],
    model: str = "cdstraj",
    dataset: str = "",
    data_hash: str = "",
) -> HorizonReport:
    """
    Root mean squared displacement error at frame 5h for h = 1..5 s.

    ``predictions`` and ``truths`` are (S, 25, 2) in meters.
    """
    predictions = np.asarray(predictions, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if predictions.size == 0 or truths.size == 0:
        raise ContractViolation("rmse_by_horizon needs at least one scenario")
    if predictions.shape != truths.shape or predictions.shape[1:] != (FUTURE_FRAMES, 2):
        raise ContractViolation(
            f"predictions {predictions.shape} and truths {truths.shape} must both be (S, 25, 2)"
        )
    frames = [horizon * FRAME_HZ - 1 for horizon in HORIZONS_S]
    errors = predictions[:, frames] - truths[:, frames]
    rmse = np.sqrt(np.mean(np.sum(errors**2, axis=-1), axis=0))
    return HorizonReport(
        model=model,
        rmse=tuple(float(v) for v in rmse),
        n_samples=int(predictions.shape[0]),
        dataset=dataset,
        data_hash=data_hash,
    )


def zero_velocity_baseline(window: ScenarioWindow) -> np.ndarray:
    """Hold the last observed position for every future frame."""
    return np.repeat(window.target_history[-1:], FUTURE_FRAMES, axis=0)


def constant_velocity_baseline(window: ScenarioWindow) -> np.ndarray:
    """Extrapolate the last observed frame-to-frame displacement."""
    step = window.target_history[-1] - window.target_history[-2]
    ahead = np.arange(1, FUTURE_FRAMES + 1, dtype=np.float64)[:, None]
    return window.target_history[-1] + ahead * step


def model_trajectories(
    model: CDSTrajModel, windows: Sequence[ScenarioWindow], batch_size: int = 64
) -> np.ndarray:
    """Mean trajectory of each window's most probable mode, (S, 25, 2)."""
    predictions = model.predict_many(windows, batch_size=batch_size)
    return np.stack([p.mean_of(p.best_mode()) for p in predictions])


def _truths(windows: Sequence[ScenarioWindow]) -> np.ndarray:
    return np.stack([w.target_future for w in windows])


def evaluate_model(
    model: CDSTrajModel,
    windows: Sequence[ScenarioWindow],
    model_tag: str = "cdstraj",
    dataset: str = "",
    data_hash: str = "",
) -> HorizonReport:
    if not windows:
        raise ContractViolation("evaluation set is empty")
    return rmse_by_horizon(
        model_trajectories(model, windows), _truths(windows), model_tag, dataset, data_hash
    )


def baseline_reports(
    windows: Sequence[ScenarioWindow], dataset: str = "", data_hash: str = ""
) -> list[HorizonReport]:
    """Reports of the zero-velocity and constant-velocity predictors."""
    if not windows:
        raise ContractViolation("evaluation set is empty")
    truths = _truths(windows)
    return [
        rmse_by_horizon(
            np.stack([zero_velocity_baseline(w) for w in windows]),
            truths,
            "zero_velocity",
            dataset,
            data_hash,
        ),
        rmse_by_horizon(
            np.stack([constant_velocity_baseline(w) for w in windows]),
            truths,
            "constant_velocity",
            dataset,
            data_hash,
        ),
    ]


def maneuver_accuracy(model: CDSTrajModel, windows: Sequence[ScenarioWindow]) -> dict[str, float]:
    """Share of windows whose argmax lateral, longitudinal and joint class match the labels."""
    if not model.decoder.conditioned:
        raise ContractViolation("maneuver accuracy needs the maneuver-conditioned decoder")
    if not windows:
        raise ContractViolation("evaluation set is empty")
    predictions = model.predict_many(windows)
    lat_hits = lon_hits = joint_hits = 0
    for window, prediction in zip(windows, predictions, strict=True):
        assert prediction.p_lat is not None and prediction.p_lon is not None
        lat_ok = int(np.argmax(prediction.p_lat)) == window.lat_label
        lon_ok = int(np.argmax(prediction.p_lon)) == window.lon_label
        lat_hits += lat_ok
        lon_hits += lon_ok
        joint_hits += lat_ok and lon_ok
    count = float(len(windows))
    return {"lat": lat_hits / count, "lon": lon_hits / count, "joint": joint_hits / count}


def constant_velocity_windows(windows: Sequence[ScenarioWindow]) -> list[ScenarioWindow]:
    """Windows labeled lane-keeping without braking."""
    return [w for w in windows if w.lat_label == LAT_KEEP and w.lon_label != LON_BRAKING]


@dataclass
class AblationRow:
    """One configuration of the ablation table, averaged over seeds."""

    config: AblationConfig
    report: HorizonReport
    val_mse: list[float] = field(default_factory=list)


def ablation_run(
    settings: Settings,
    split: DatasetSplit,
    seeds: Sequence[int] | None = None,
    dataset: str | None = None,
) -> list[AblationRow]:
    """
    Train and evaluate configurations A-F on the same data with the same budget.

    RMSE is averaged over ``seeds`` (default: the configured seed). Every row
    is evaluated on the test windows, or validation windows if there is no
    test split.
    """
    seeds = list(seeds) if seeds else [settings.train.seed]
    windows = split.test or split.validation
    if not windows:
        raise ContractViolation("ablation needs test or validation windows")
    data_hash = dataset_hash([*split.train, *split.validation, *split.test])
    tag = dataset or split.provenance
    rows = []
    for config in AblationConfig.table():
        configured = config.apply(settings)
        rmses = []
        val_mse = []
        for seed in seeds:
            seeded = configured.model_copy(
                update={"train": configured.train.model_copy(update={"seed": seed})}
            )
            manifest = train_two_stage(seeded, split)
            metrics = manifest.progress.get("metrics", [])
            mse_rows = [m["val_mse"] for m in metrics if m["stage"] == "mse"]
            if mse_rows:
                val_mse.append(float(mse_rows[-1]))
            model = restore_model(manifest)
            rmses.append(evaluate_model(model, windows, config.name).rmse)
        check = dataset_hash([*split.train, *split.validation, *split.test])
        if check != data_hash:
            raise ContractViolation(f"dataset changed during ablation row {config.name}")
        report = HorizonReport(
            model=config.name,
            rmse=tuple(float(v) for v in np.mean(np.array(rmses), axis=0)),
            n_samples=len(windows),
            dataset=tag,
            data_hash=data_hash,
        )
        logger.info(
            "Ablation row finished",
            model=config.name,
            disabled=config.disabled,
            rmse_5s=report.at(5),
            val_mse=val_mse,
        )
        rows.append(AblationRow(config, report, val_mse))
    return rows


def write_report(reports: Sequence[HorizonReport], path: str | Path) -> Path:
    """CSV with columns model,horizon_s,rmse_m,n_samples,dataset,data_hash after a comment line."""
    path = Path(path)
    frame = pl.DataFrame(
        [row for report in reports for row in report.rows()],
        schema={
            "model": pl.String,
            "horizon_s": pl.Int64,
            "rmse_m": pl.Float64,
            "n_samples": pl.Int64,
            "dataset": pl.String,
            "data_hash": pl.String,
        },
        orient="row",
    )
    body = frame.select(REPORT_COLUMNS).write_csv(line_terminator="\n")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(f"{REPORT_HEADER}\n{body}", encoding="utf-8")
    logger.info("Report written", path=str(path), rows=frame.height)
    return path
