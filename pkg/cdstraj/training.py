"""Losses, the two-stage trainer and checkpoint files."""

from __future__ import annotations

import json
import math
from collections.abc import Sequence
from dataclasses import asdict, astuple, dataclass, field
from pathlib import Path
from typing import Any, Literal

import numpy as np
import polars as pl
import structlog
from pydantic import BaseModel, ConfigDict, ValidationError

from cdstraj.config import ConfigurationError, Settings, settings_from_dict
from cdstraj.model.decoder import ManeuverDistribution, ModeTrajectory
from cdstraj.model.pipeline import CDSTrajModel
from cdstraj.numerics import (
    Adam,
    AdamState,
    ComputationRecord,
    ContractViolation,
    Rng,
    Tensor,
    set_debug,
)
from cdstraj.numerics import tensor as T
from cdstraj.scenario_data import DatasetSplit, ScenarioWindow, WindowBatch, iter_batches

logger = structlog.get_logger(__name__)

STAGE_INIT = "init"
STAGE_DIFFUSION = "diffusion"
STAGE_MSE = "mse"
STAGE_NLL = "nll"

METRIC_COLUMNS = ["epoch", "stage", "train_loss", "val_mse", "val_nll", "val_ce"]
CHECKPOINT_FORMAT = 1
CHECKPOINT_ENCODING = "float64-le"
PROB_FLOOR = 1e-12


class CheckpointError(ValueError):
    """Raised when a checkpoint file cannot be loaded; the message names the field."""


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def _as_batched(pred: Tensor, truth: np.ndarray) -> tuple[Tensor, np.ndarray]:
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ContractViolation(f"prediction shape {pred.shape} differs from truth {truth.shape}")
    if pred.ndim == 2:
        return T.reshape(pred, (1, *pred.shape)), truth[None]
    if pred.ndim != 3 or pred.shape[-1] != 2:
        raise ContractViolation(f"expected (steps, 2) or (batch, steps, 2), got {pred.shape}")
    return pred, truth


def mse_loss(pred: Tensor, truth: np.ndarray) -> Tensor:
    """Squared coordinate errors summed over steps, averaged over the batch only."""
    pred, truth = _as_batched(pred, truth)
    return T.tsum(T.square(pred - truth)) / float(pred.shape[0])


def nll_loss(mode: ModeTrajectory, truth: np.ndarray) -> Tensor:
    """Bivariate Gaussian negative log-likelihood summed over steps, averaged over the batch."""
    mu, truth = _as_batched(mode.mu, truth)
    sigma = mode.sigma if mode.sigma.ndim == 3 else T.reshape(mode.sigma, mu.shape)
    rho = mode.rho if mode.rho.ndim == 2 else T.reshape(mode.rho, mu.shape[:2])
    if np.any(sigma.data <= 0.0) or np.any(np.abs(rho.data) >= 1.0):
        raise ContractViolation("nll_loss needs sigma > 0 and |rho| < 1")
    z = (truth - mu) / sigma
    zx, zy = z[..., 0], z[..., 1]
    one_minus = 1.0 - T.square(rho)
    log_norm = (
        math.log(2.0 * math.pi)
        + T.log(sigma[..., 0])
        + T.log(sigma[..., 1])
        + 0.5 * T.log(one_minus)
    )
    quad = (T.square(zx) + T.square(zy) - 2.0 * rho * zx * zy) / (2.0 * one_minus)
    return T.tsum(log_norm + quad) / float(mu.shape[0])


def maneuver_ce_loss(
    dist: ManeuverDistribution, lat_labels: np.ndarray, lon_labels: np.ndarray
) -> Tensor:
    """Lateral plus longitudinal cross-entropy, averaged over the batch."""
    lat_labels = np.asarray(lat_labels, dtype=np.int64)
    lon_labels = np.asarray(lon_labels, dtype=np.int64)
    rows = np.arange(dist.p_lat.shape[0])
    if lat_labels.shape != rows.shape or lon_labels.shape != rows.shape:
        raise ContractViolation("one lateral and one longitudinal label per batch row required")
    p_lat = T.clamp(dist.p_lat[rows, lat_labels], PROB_FLOOR, 1.0)
    p_lon = T.clamp(dist.p_lon[rows, lon_labels], PROB_FLOOR, 1.0)
    return -T.tsum(T.log(p_lat) + T.log(p_lon)) / float(rows.size)


def neighbor_mse_loss(pred: Tensor, truth: np.ndarray, presence_mask: np.ndarray) -> Tensor:
    """Summed squared error over present neighbors' futures, per present neighbor."""
    present = int(presence_mask.sum())
    if present == 0:
        return T.zeros(())
    keep = presence_mask[:, :, None, None].astype(np.float64)
    return T.tsum(T.square(pred - truth) * keep) / float(present)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


@dataclass
class CheckpointManifest:
    """Everything needed to rebuild a model and continue its training."""

    stage: str
    epoch: int
    seed: int
    settings: dict[str, Any]
    params: dict[str, np.ndarray]
    adam: AdamState = field(default_factory=AdamState)
    progress: dict[str, Any] = field(default_factory=dict)
    format_version: int = CHECKPOINT_FORMAT

    def to_settings(self) -> Settings:
        return settings_from_dict(self.settings, apply_seed_override=False)


class CheckpointEntry(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    group: Literal["param", "adam_m", "adam_v"]
    shape: list[int]
    offset: int
    count: int


class CheckpointHeader(BaseModel):
    model_config = ConfigDict(extra="forbid")

    format_version: int
    stage: str
    epoch: int
    seed: int
    encoding: Literal["float64-le"]
    settings: dict[str, Any]
    adam_step: int
    progress: dict[str, Any]
    entries: list[CheckpointEntry]


def save_checkpoint(manifest: CheckpointManifest, path: str | Path) -> Path:
    """
    Write a JSON header line followed by a little-endian float64 blob.

    Arrays are laid out in header order: parameters, then first and second
    optimizer moments, each sorted by name.
    """
    path = Path(path)
    groups = [
        ("param", manifest.params),
        ("adam_m", manifest.adam.m),
        ("adam_v", manifest.adam.v),
    ]
    entries = []
    chunks = []
    offset = 0
    for group, arrays in groups:
        for name in sorted(arrays):
            array = np.asarray(arrays[name], dtype="<f8")
            entries.append(
                CheckpointEntry(
                    name=name,
                    group=group,
                    shape=list(array.shape),
                    offset=offset,
                    count=array.size,
                )
            )
            chunks.append(array.tobytes(order="C"))
            offset += array.size
    header = CheckpointHeader(
        format_version=manifest.format_version,
        stage=manifest.stage,
        epoch=manifest.epoch,
        seed=manifest.seed,
        encoding=CHECKPOINT_ENCODING,
        settings=manifest.settings,
        adam_step=manifest.adam.step,
        progress=manifest.progress,
        entries=entries,
    )
    line = json.dumps(header.model_dump(), sort_keys=True, separators=(",", ":"))
    path.parent.mkdir(parents=True, exist_ok=True)
    staging = path.with_name(path.name + ".partial")
    staging.write_bytes(line.encode("utf-8") + b"\n" + b"".join(chunks))
    staging.replace(path)
    logger.info("Checkpoint written", path=str(path), stage=manifest.stage, epoch=manifest.epoch)
    return path


def _parse_header(raw: bytes) -> CheckpointHeader:
    try:
        data = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"header: not valid JSON ({e})") from e
    if not isinstance(data, dict):
        raise CheckpointError("header: expected a JSON object")
    if data.get("format_version") != CHECKPOINT_FORMAT:
        raise CheckpointError(
            f"format_version: expected {CHECKPOINT_FORMAT}, got {data.get('format_version')!r}"
        )
    try:
        return CheckpointHeader.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(part) for part in first["loc"])
        raise CheckpointError(f"{where}: {first['msg']}") from e


def load_checkpoint(path: str | Path) -> CheckpointManifest:
    """
    Read and validate a checkpoint.

    Names and shapes are checked against the architecture the stored settings
    describe; any mismatch, truncation or version change is rejected before
    anything is returned.
    """
    payload = Path(path).read_bytes()
    split_at = payload.find(b"\n")
    if split_at < 0:
        raise CheckpointError("header: missing line terminator (truncated file)")
    header = _parse_header(payload[:split_at])
    blob = payload[split_at + 1 :]

    expected_values = sum(entry.count for entry in header.entries)
    if len(blob) != 8 * expected_values:
        raise CheckpointError(
            f"blob: expected {8 * expected_values} bytes, found {len(blob)} (truncated or corrupt)"
        )
    try:
        settings = settings_from_dict(header.settings, apply_seed_override=False)
    except ConfigurationError as e:
        raise CheckpointError(f"settings: {e}") from e
    expected = CDSTrajModel(settings, seed=header.seed).params.shapes()

    arrays: dict[str, dict[str, np.ndarray]] = {"param": {}, "adam_m": {}, "adam_v": {}}
    position = 0
    for entry in header.entries:
        if entry.name not in expected:
            raise CheckpointError(f"entries: unknown parameter name {entry.name!r}")
        shape = tuple(entry.shape)
        if shape != expected[entry.name]:
            raise CheckpointError(
                f"entries: parameter {entry.name!r} has shape {shape}, "
                f"model expects {expected[entry.name]}"
            )
        if entry.count != int(np.prod(shape, dtype=np.int64)) or entry.offset != position:
            raise CheckpointError(f"entries: bad layout for {entry.name!r}")
        if entry.name in arrays[entry.group]:
            raise CheckpointError(f"entries: duplicate {entry.group} entry {entry.name!r}")
        values = np.frombuffer(blob, dtype="<f8", count=entry.count, offset=8 * entry.offset)
        arrays[entry.group][entry.name] = values.astype(np.float64).reshape(shape)
        position += entry.count

    missing = sorted(set(expected) - set(arrays["param"]))
    if missing:
        raise CheckpointError(f"entries: missing parameters {missing}")
    return CheckpointManifest(
        stage=header.stage,
        epoch=header.epoch,
        seed=header.seed,
        settings=header.settings,
        params=arrays["param"],
        adam=AdamState(step=header.adam_step, m=arrays["adam_m"], v=arrays["adam_v"]),
        progress=header.progress,
        format_version=header.format_version,
    )


def restore_model(manifest: CheckpointManifest) -> CDSTrajModel:
    """Rebuild the model a manifest describes, with its parameter values."""
    model = CDSTrajModel(manifest.to_settings(), seed=manifest.seed)
    model.params.load_arrays(manifest.params)
    return model


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class EpochMetrics:
    epoch: int
    stage: str
    train_loss: float
    val_mse: float
    val_nll: float
    val_ce: float


@dataclass
class ValidationResult:
    mse: float
    nll: float
    ce: float


def write_metrics(metrics: Sequence[EpochMetrics], path: str | Path) -> Path:
    """Write the metric log as CSV with the fixed column order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pl.DataFrame(
        [astuple(m) for m in metrics],
        schema={
            "epoch": pl.Int64,
            "stage": pl.String,
            "train_loss": pl.Float64,
            "val_mse": pl.Float64,
            "val_nll": pl.Float64,
            "val_ce": pl.Float64,
        },
        orient="row",
    )
    frame.select(METRIC_COLUMNS).write_csv(path, line_terminator="\n")
    return path


class Trainer:
    """
    Two-stage trainer.

    Epochs run diffusion pre-training (optional), then the MSE stage, then
    the NLL stage. Every epoch draws from ``Rng(seed).split(2).split(epoch)``,
    so a resumed run repeats an uninterrupted one exactly.
    """

    def __init__(
        self,
        settings: Settings,
        split: DatasetSplit,
        model: CDSTrajModel | None = None,
    ) -> None:
        if not split.train:
            raise ConfigurationError("training split is empty")
        self.settings = settings
        self.train_cfg = settings.train
        self.split = split
        self.model = model or CDSTrajModel(settings)
        self.optimizer = Adam(
            self.model.params,
            lr=self.train_cfg.lr,
            beta1=self.train_cfg.beta1,
            beta2=self.train_cfg.beta2,
            eps=self.train_cfg.eps,
        )
        self.root = Rng(self.model.seed)
        self.metrics: list[EpochMetrics] = []
        self.val_mse_history: list[float] = []
        pretrain = settings.diffusion.pretrain_epochs if self.model.diffusion is not None else 0
        self.pretrain_epochs = pretrain
        self.nll_start = pretrain + self.train_cfg.stage1_epochs
        self.epoch = 0
        self.validation = split.validation
        if not self.validation:
            logger.warning("Validation split is empty, validating on training windows")
            self.validation = split.train
        set_debug(self.train_cfg.debug)

    @property
    def total_epochs(self) -> int:
        return self.nll_start + self.train_cfg.stage2_epochs

    def stage_for(self, epoch: int) -> str:
        if epoch < self.pretrain_epochs:
            return STAGE_DIFFUSION
        if epoch < self.nll_start:
            return STAGE_MSE
        return STAGE_NLL

    def batch_loss(self, batch: WindowBatch, stage: str, rng: Rng) -> Tensor:
        """Total weighted loss of one batch for ``stage``."""
        model = self.model
        cfg = self.train_cfg
        target, neighbors, mask = model.scaled_inputs(batch)
        futures_units = batch.neighbor_futures / model.scale
        if stage == STAGE_DIFFUSION:
            assert model.diffusion is not None
            return model.diffusion.loss(target, neighbors, futures_units, mask, rng.split(1))

        out = model.forward(batch, rng.split(0))
        assert out.label_mode is not None
        if stage == STAGE_MSE:
            loss = mse_loss(out.label_mode.mu, batch.target_future)
        else:
            loss = nll_loss(out.label_mode, batch.target_future)
        if out.maneuvers is not None and cfg.lambda_man > 0:
            loss = loss + cfg.lambda_man * maneuver_ce_loss(
                out.maneuvers, batch.lat_labels, batch.lon_labels
            )
        if model.diffusion is not None:
            if cfg.lambda_diff > 0:
                loss = loss + cfg.lambda_diff * model.diffusion.loss(
                    target, neighbors, futures_units, mask, rng.split(1)
                )
            if cfg.lambda_neighbor > 0 and out.neighbor_futures is not None:
                loss = loss + cfg.lambda_neighbor * neighbor_mse_loss(
                    out.neighbor_futures, batch.neighbor_futures, mask
                )
        return loss

    def train_step(self, batch: WindowBatch, stage: str, rng: Rng) -> float:
        """One recorded forward pass, reverse pass and Adam update."""
        with ComputationRecord() as record:
            loss = self.batch_loss(batch, stage, rng)
            grads = record.backward(loss, self.model.params)
        self.optimizer.step(grads)
        return loss.item()

    def run_epoch(self, epoch: int, stage: str) -> float:
        rng = self.root.split(2).split(epoch)
        losses = []
        for index, batch in enumerate(
            iter_batches(self.split.train, self.train_cfg.batch_size, rng.split(0))
        ):
            value = self.train_step(batch, stage, rng.split(1).split(index))
            logger.debug("Batch finished", epoch=epoch, batch=index, stage=stage, loss=value)
            losses.append(value * batch.size)
        return float(sum(losses) / len(self.split.train))

    def evaluate(self, windows: Sequence[ScenarioWindow]) -> ValidationResult:
        """Label-mode MSE and NLL and maneuver cross-entropy, averaged over windows."""
        if not windows:
            raise ContractViolation("cannot evaluate an empty window list")
        rng = self.root.split(3)
        totals = {"mse": 0.0, "nll": 0.0, "ce": 0.0}
        for index, batch in enumerate(iter_batches(windows, self.train_cfg.batch_size)):
            out = self.model.forward(batch, rng.split(index))
            assert out.label_mode is not None
            totals["mse"] += mse_loss(out.label_mode.mu, batch.target_future).item() * batch.size
            totals["nll"] += nll_loss(out.label_mode, batch.target_future).item() * batch.size
            if out.maneuvers is not None:
                ce = maneuver_ce_loss(out.maneuvers, batch.lat_labels, batch.lon_labels)
                totals["ce"] += ce.item() * batch.size
        count = float(len(windows))
        ce_value = totals["ce"] / count if self.model.decoder.conditioned else float("nan")
        return ValidationResult(totals["mse"] / count, totals["nll"] / count, ce_value)

    def _check_plateau(self, epoch: int, val_mse: float) -> None:
        self.val_mse_history.append(val_mse)
        if not self.train_cfg.plateau_switch:
            return
        patience = self.train_cfg.plateau_patience
        history = self.val_mse_history
        if len(history) <= patience:
            return
        recent = history[-(patience + 1) :]
        gains = [
            (before - after) / before if before > 0 else 0.0
            for before, after in zip(recent[:-1], recent[1:], strict=True)
        ]
        if all(gain < self.train_cfg.plateau_tolerance for gain in gains):
            self.nll_start = epoch + 1
            logger.warning(
                "Validation MSE plateaued, switching to NLL",
                epoch=epoch,
                val_mse=val_mse,
                patience=patience,
            )

    def manifest(self) -> CheckpointManifest:
        stage = self.metrics[-1].stage if self.metrics else STAGE_INIT
        return CheckpointManifest(
            stage=stage,
            epoch=self.epoch,
            seed=self.model.seed,
            settings=self.settings.to_json_dict(),
            params=self.model.params.to_arrays(),
            adam=AdamState(
                step=self.optimizer.state.step,
                m={k: v.copy() for k, v in self.optimizer.state.m.items()},
                v={k: v.copy() for k, v in self.optimizer.state.v.items()},
            ),
            progress={
                "nll_start": self.nll_start,
                "val_mse_history": list(self.val_mse_history),
                "metrics": [asdict(m) for m in self.metrics],
            },
        )

    def restore(self, manifest: CheckpointManifest) -> None:
        """Continue from a manifest's parameters, optimizer moments and epoch counter."""
        if manifest.seed != self.model.seed:
            raise CheckpointError(
                f"seed: checkpoint has {manifest.seed}, trainer uses {self.model.seed}"
            )
        self.model.params.load_arrays(manifest.params)
        self.optimizer.state = AdamState(
            step=manifest.adam.step,
            m={k: v.copy() for k, v in manifest.adam.m.items()},
            v={k: v.copy() for k, v in manifest.adam.v.items()},
        )
        self.epoch = manifest.epoch
        progress = manifest.progress
        self.nll_start = int(progress.get("nll_start", self.nll_start))
        self.val_mse_history = [float(v) for v in progress.get("val_mse_history", [])]
        self.metrics = [EpochMetrics(**row) for row in progress.get("metrics", [])]

    def fit(
        self,
        max_epochs: int | None = None,
        metrics_path: str | Path | None = None,
    ) -> CheckpointManifest:
        """
        Train until the schedule ends, or for at most ``max_epochs`` more epochs.

        Returns the manifest at the last completed epoch.
        """
        ran = 0
        while self.epoch < self.total_epochs and (max_epochs is None or ran < max_epochs):
            epoch = self.epoch
            stage = self.stage_for(epoch)
            if epoch == self.nll_start and stage == STAGE_NLL:
                logger.info("Stage switch", epoch=epoch, stage=stage)
            train_loss = self.run_epoch(epoch, stage)
            val = self.evaluate(self.validation)
            self.metrics.append(
                EpochMetrics(epoch, stage, train_loss, val.mse, val.nll, val.ce)
            )
            logger.info(
                "Epoch finished",
                epoch=epoch,
                stage=stage,
                train_loss=train_loss,
                val_mse=val.mse,
                val_nll=val.nll,
                val_ce=val.ce,
            )
            if stage == STAGE_MSE:
                self._check_plateau(epoch, val.mse)
            self.epoch += 1
            ran += 1
        if metrics_path is not None:
            write_metrics(self.metrics, metrics_path)
        return self.manifest()


def train_two_stage(
    settings: Settings,
    split: DatasetSplit,
    metrics_path: str | Path | None = None,
    resume: CheckpointManifest | None = None,
) -> CheckpointManifest:
    """Run (or continue) the full training schedule and return the final manifest."""
    trainer = Trainer(settings, split)
    if resume is not None:
        trainer.restore(resume)
    logger.info(
        "Training started",
        windows=len(split.train),
        parameters=trainer.model.params.count(),
        epochs=trainer.total_epochs,
        start_epoch=trainer.epoch,
    )
    return trainer.fit(metrics_path=metrics_path)
