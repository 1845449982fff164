"""Track ingestion, windowing, neighbor selection and synthetic highway traffic."""

from __future__ import annotations

import hashlib
import json
from collections.abc import Iterator, Mapping, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Literal

import numpy as np
import polars as pl
import structlog

from cdstraj.config import DataSettings
from cdstraj.numerics import ContractViolation, Rng

logger = structlog.get_logger(__name__)

FRAME_HZ = 5
HISTORY_FRAMES = 16
FUTURE_FRAMES = 25
WINDOW_FRAMES = HISTORY_FRAMES + FUTURE_FRAMES

LAT_CLASSES = ("left", "keep", "right")
LON_CLASSES = ("normal", "braking")
LAT_LEFT, LAT_KEEP, LAT_RIGHT = 0, 1, 2
LON_NORMAL, LON_BRAKING = 0, 1

LANE_WIDTH = 3.5
LANE_COUNT = 3
LATERAL_THRESHOLD = 1.75
BRAKING_RATIO = 0.8

CSV_COLUMNS = ["agent_id", "frame", "x", "y"]
SPLIT_NAMES = ("train", "validation", "test")
CACHE_FORMAT = 1

Provenance = Literal["csv", "synthetic"]


class DataFormatError(ValueError):
    """Raised for malformed track files and dataset caches."""


@dataclass(frozen=True)
class TrackPoint:
    """One agent position at one 5 Hz frame."""

    agent_id: int
    frame: int
    x: float
    y: float


@dataclass(frozen=True, eq=False)
class AgentTrack:
    """All points of one agent, frames strictly increasing."""

    agent_id: int
    frames: np.ndarray
    xy: np.ndarray

    def __len__(self) -> int:
        return int(self.frames.size)

    def position_at(self, frame: int) -> np.ndarray | None:
        index = int(np.searchsorted(self.frames, frame))
        if index < self.frames.size and self.frames[index] == frame:
            return self.xy[index]
        return None

    def nearest_positions(self, frames: np.ndarray) -> np.ndarray:
        """Positions at ``frames``, holding the nearest observed point where absent."""
        right = np.clip(np.searchsorted(self.frames, frames), 0, self.frames.size - 1)
        left = np.clip(right - 1, 0, self.frames.size - 1)
        use_left = np.abs(self.frames[left] - frames) < np.abs(self.frames[right] - frames)
        return self.xy[np.where(use_left, left, right)]


@dataclass(frozen=True, eq=False)
class ScenarioWindow:
    """
    One prediction instance: 16 history frames and 25 future frames.

    Coordinates are meters. Neighbor slots beyond the selected agents are
    masked off and all-zero. ``origin`` is the translation already removed.
    """

    target_history: np.ndarray
    neighbor_histories: np.ndarray
    presence_mask: np.ndarray
    target_future: np.ndarray
    neighbor_futures: np.ndarray
    lat_label: int
    lon_label: int
    agent_id: int
    start_frame: int
    scene_id: int = -1
    origin: np.ndarray = field(default_factory=lambda: np.zeros(2))
    neighbor_ids: tuple[int, ...] = ()
    source_labels: tuple[int, int] | None = None

    @property
    def n_max(self) -> int:
        return int(self.presence_mask.size)

    @property
    def key(self) -> tuple[int, int]:
        return (self.agent_id, self.start_frame)

    def to_record(self) -> dict[str, Any]:
        record: dict[str, Any] = {
            "agent_id": self.agent_id,
            "start_frame": self.start_frame,
            "scene_id": self.scene_id,
            "origin": self.origin.tolist(),
            "neighbor_ids": list(self.neighbor_ids),
            "lat": LAT_CLASSES[self.lat_label],
            "lon": LON_CLASSES[self.lon_label],
            "target_history": self.target_history.tolist(),
            "target_future": self.target_future.tolist(),
            "presence_mask": [bool(v) for v in self.presence_mask],
            "neighbor_histories": self.neighbor_histories.tolist(),
            "neighbor_futures": self.neighbor_futures.tolist(),
        }
        if self.source_labels is not None:
            record["source_lat"] = LAT_CLASSES[self.source_labels[0]]
            record["source_lon"] = LON_CLASSES[self.source_labels[1]]
        return record

    @classmethod
    def from_record(cls, record: Mapping[str, Any]) -> ScenarioWindow:
        source = None
        if "source_lat" in record:
            source = (
                LAT_CLASSES.index(record["source_lat"]),
                LON_CLASSES.index(record["source_lon"]),
            )
        window = cls(
            target_history=np.array(record["target_history"], dtype=np.float64),
            neighbor_histories=np.array(record["neighbor_histories"], dtype=np.float64),
            presence_mask=np.array(record["presence_mask"], dtype=bool),
            target_future=np.array(record["target_future"], dtype=np.float64),
            neighbor_futures=np.array(record["neighbor_futures"], dtype=np.float64),
            lat_label=LAT_CLASSES.index(record["lat"]),
            lon_label=LON_CLASSES.index(record["lon"]),
            agent_id=int(record["agent_id"]),
            start_frame=int(record["start_frame"]),
            scene_id=int(record["scene_id"]),
            origin=np.array(record["origin"], dtype=np.float64),
            neighbor_ids=tuple(int(v) for v in record["neighbor_ids"]),
            source_labels=source,
        )
        _check_window(window)
        return window


def _check_window(window: ScenarioWindow) -> None:
    n = window.presence_mask.size
    expected = {
        "target_history": (HISTORY_FRAMES, 2),
        "target_future": (FUTURE_FRAMES, 2),
        "neighbor_histories": (n, HISTORY_FRAMES, 2),
        "neighbor_futures": (n, FUTURE_FRAMES, 2),
    }
    for name, shape in expected.items():
        actual = getattr(window, name).shape
        if actual != shape:
            raise DataFormatError(
                f"window {window.key}: {name} has shape {actual}, expected {shape}"
            )


@dataclass
class DatasetSplit:
    """Train/validation/test windows with their provenance."""

    train: list[ScenarioWindow]
    validation: list[ScenarioWindow]
    test: list[ScenarioWindow]
    provenance: Provenance
    seed: int | None = None

    def parts(self) -> dict[str, list[ScenarioWindow]]:
        return {"train": self.train, "validation": self.validation, "test": self.test}


@dataclass(frozen=True, eq=False)
class WindowBatch:
    """Windows stacked along a leading batch axis."""

    target_history: np.ndarray
    neighbor_histories: np.ndarray
    presence_mask: np.ndarray
    target_future: np.ndarray
    neighbor_futures: np.ndarray
    lat_labels: np.ndarray
    lon_labels: np.ndarray

    @property
    def size(self) -> int:
        return int(self.target_history.shape[0])

    @classmethod
    def from_windows(cls, windows: Sequence[ScenarioWindow]) -> WindowBatch:
        if not windows:
            raise ContractViolation("cannot batch an empty window list")
        widths = {w.n_max for w in windows}
        if len(widths) != 1:
            raise ContractViolation(f"windows disagree on neighbor slots: {sorted(widths)}")
        return cls(
            target_history=np.stack([w.target_history for w in windows]),
            neighbor_histories=np.stack([w.neighbor_histories for w in windows]),
            presence_mask=np.stack([w.presence_mask for w in windows]),
            target_future=np.stack([w.target_future for w in windows]),
            neighbor_futures=np.stack([w.neighbor_futures for w in windows]),
            lat_labels=np.array([w.lat_label for w in windows], dtype=np.int64),
            lon_labels=np.array([w.lon_label for w in windows], dtype=np.int64),
        )


def iter_batches(
    windows: Sequence[ScenarioWindow], batch_size: int, rng: Rng | None = None
) -> Iterator[WindowBatch]:
    """Yield batches in order, or shuffled by ``rng`` when given."""
    if batch_size < 1:
        raise ContractViolation(f"batch_size must be >= 1, got {batch_size}")
    order = rng.permutation(len(windows)) if rng is not None else np.arange(len(windows))
    for start in range(0, len(windows), batch_size):
        yield WindowBatch.from_windows([windows[int(i)] for i in order[start : start + batch_size]])


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


def load_tracks_csv(path: str | Path, source_hz: int = 10) -> list[TrackPoint]:
    """
    Read an ``agent_id,frame,x,y`` track file.

    Points come back sorted by agent then frame. 10 Hz files are decimated to
    5 Hz by keeping even frames, so frame k here is frame 2k in the file.
    """
    if source_hz not in (5, 10):
        raise ContractViolation(f"source_hz must be 5 or 10, got {source_hz}")
    try:
        raw = pl.read_csv(path, infer_schema=False)
    except pl.exceptions.NoDataError:
        raise DataFormatError(f"{path}: missing header row") from None
    except pl.exceptions.PolarsError as e:
        raise DataFormatError(f"{path}: unreadable track file: {e}") from e

    if raw.columns != CSV_COLUMNS:
        raise DataFormatError(f"{path}: header must be {','.join(CSV_COLUMNS)}, got {raw.columns}")
    if raw.height == 0:
        return []

    parsed = raw.with_row_index("row").with_columns(
        pl.col("agent_id").str.strip_chars().cast(pl.Int64, strict=False),
        pl.col("frame").str.strip_chars().cast(pl.Int64, strict=False),
        pl.col("x").str.strip_chars().cast(pl.Float64, strict=False),
        pl.col("y").str.strip_chars().cast(pl.Float64, strict=False),
    )
    bad = parsed.filter(
        pl.any_horizontal(pl.col(CSV_COLUMNS).is_null())
        | ~pl.col("x").is_finite()
        | ~pl.col("y").is_finite()
    )
    if bad.height:
        row = int(bad["row"][0])
        line = row + 2
        raise DataFormatError(f"{path}: malformed row at line {line}: {raw.row(row)}")

    steps = parsed.with_columns(pl.col("frame").diff().over("agent_id").alias("step"))
    unordered = steps.filter(pl.col("step") <= 0)["agent_id"].unique().sort().to_list()
    if unordered:
        raise DataFormatError(f"{path}: frames not strictly increasing for agents {unordered}")

    if source_hz == 10:
        parsed = parsed.filter(pl.col("frame") % 2 == 0).with_columns(pl.col("frame") // 2)

    parsed = parsed.sort(["agent_id", "frame"])
    points = [
        TrackPoint(agent_id=a, frame=f, x=x, y=y)
        for a, f, x, y in parsed.select(CSV_COLUMNS).iter_rows()
    ]
    logger.info(
        "Tracks loaded",
        path=str(path),
        agents=parsed["agent_id"].n_unique(),
        points=len(points),
        source_hz=source_hz,
    )
    return points


def group_tracks(points: Sequence[TrackPoint]) -> dict[int, AgentTrack]:
    """Group points by agent, sorted by frame."""
    by_agent: dict[int, list[TrackPoint]] = {}
    for point in points:
        by_agent.setdefault(point.agent_id, []).append(point)
    tracks = {}
    for agent_id in sorted(by_agent):
        rows = sorted(by_agent[agent_id], key=lambda p: p.frame)
        frames = np.array([p.frame for p in rows], dtype=np.int64)
        if np.any(np.diff(frames) <= 0):
            raise DataFormatError(f"frames not strictly increasing for agents [{agent_id}]")
        xy = np.array([[p.x, p.y] for p in rows], dtype=np.float64)
        tracks[agent_id] = AgentTrack(agent_id, frames, xy)
    return tracks


# ---------------------------------------------------------------------------
# Windowing
# ---------------------------------------------------------------------------


def select_neighbors(
    target_id: int,
    anchor_frame: int,
    tracks: Mapping[int, AgentTrack],
    radius_lat: float = 12.0,
    radius_lon: float = 90.0,
    n_max: int = 8,
) -> tuple[list[int], np.ndarray]:
    """
    Agents present at ``anchor_frame`` inside the lateral/longitudinal box.

    Sorted nearest first, ties by agent id, capped at ``n_max``. Returns the
    chosen agent ids and an ``n_max`` presence mask.
    """
    anchor = tracks[target_id].position_at(anchor_frame)
    if anchor is None:
        raise ContractViolation(f"agent {target_id} has no point at frame {anchor_frame}")
    candidates: list[tuple[float, int]] = []
    for agent_id, track in tracks.items():
        if agent_id == target_id:
            continue
        position = track.position_at(anchor_frame)
        if position is None:
            continue
        dx, dy = position - anchor
        if abs(dx) <= radius_lat and abs(dy) <= radius_lon:
            candidates.append((float(np.hypot(dx, dy)), agent_id))
    chosen = [agent_id for _, agent_id in sorted(candidates)[:n_max]]
    mask = np.zeros(n_max, dtype=bool)
    mask[: len(chosen)] = True
    return chosen, mask


def normalize_frame(window: ScenarioWindow) -> ScenarioWindow:
    """Translate every present position so the target's last history point is the origin."""
    shift = window.target_history[-1].copy()
    present = window.presence_mask[:, None, None]
    return replace(
        window,
        target_history=window.target_history - shift,
        target_future=window.target_future - shift,
        neighbor_histories=np.where(present, window.neighbor_histories - shift, 0.0),
        neighbor_futures=np.where(present, window.neighbor_futures - shift, 0.0),
        origin=window.origin + shift,
    )


def label_maneuvers(window: ScenarioWindow) -> tuple[int, int]:
    """Lateral class from the final displacement, longitudinal from the speed ratio."""
    last = window.target_history[-1]
    lateral = window.target_future[-1, 0] - last[0]
    if lateral > LATERAL_THRESHOLD:
        lat = LAT_LEFT
    elif lateral < -LATERAL_THRESHOLD:
        lat = LAT_RIGHT
    else:
        lat = LAT_KEEP

    last_speed = np.linalg.norm(last - window.target_history[-2]) * FRAME_HZ
    path = np.concatenate([window.target_history[-1:], window.target_future])
    future_speed = np.linalg.norm(np.diff(path, axis=0), axis=1).mean() * FRAME_HZ
    lon = LON_BRAKING if future_speed < BRAKING_RATIO * last_speed else LON_NORMAL
    return lat, lon


def _consecutive_runs(frames: np.ndarray) -> list[tuple[int, int]]:
    """(first index, length) of every run of consecutive frames."""
    breaks = np.flatnonzero(np.diff(frames) != 1) + 1
    starts = np.concatenate([[0], breaks])
    ends = np.concatenate([breaks, [frames.size]])
    return [(int(s), int(e - s)) for s, e in zip(starts, ends, strict=True)]


def build_windows(
    tracks: Mapping[int, AgentTrack],
    stride: int = 1,
    n_max: int = 8,
    radius_lat: float = 12.0,
    radius_lon: float = 90.0,
    scene_id: int = -1,
) -> list[ScenarioWindow]:
    """
    Cut every agent's consecutive-frame runs into 41-frame windows.

    Each window takes that agent as target, selects neighbors at its last
    history frame, is translated to the target frame and labeled.
    """
    if stride < 1:
        raise ContractViolation(f"stride must be >= 1, got {stride}")
    windows = []
    for agent_id in sorted(tracks):
        track = tracks[agent_id]
        for run_start, run_length in _consecutive_runs(track.frames):
            if run_length < WINDOW_FRAMES:
                continue
            for offset in range(0, run_length - WINDOW_FRAMES + 1, stride):
                first = run_start + offset
                windows.append(
                    _make_window(
                        track, first, tracks, n_max, radius_lat, radius_lon, scene_id
                    )
                )
    return windows


def _make_window(
    track: AgentTrack,
    first: int,
    tracks: Mapping[int, AgentTrack],
    n_max: int,
    radius_lat: float,
    radius_lon: float,
    scene_id: int,
) -> ScenarioWindow:
    start_frame = int(track.frames[first])
    anchor_frame = start_frame + HISTORY_FRAMES - 1
    neighbor_ids, mask = select_neighbors(
        track.agent_id, anchor_frame, tracks, radius_lat, radius_lon, n_max
    )
    frames = np.arange(start_frame, start_frame + WINDOW_FRAMES)
    neighbors = np.zeros((n_max, WINDOW_FRAMES, 2))
    for slot, neighbor_id in enumerate(neighbor_ids):
        neighbors[slot] = tracks[neighbor_id].nearest_positions(frames)
    span = track.xy[first : first + WINDOW_FRAMES]
    raw = ScenarioWindow(
        target_history=span[:HISTORY_FRAMES].copy(),
        neighbor_histories=neighbors[:, :HISTORY_FRAMES],
        presence_mask=mask,
        target_future=span[HISTORY_FRAMES:].copy(),
        neighbor_futures=neighbors[:, HISTORY_FRAMES:],
        lat_label=LAT_KEEP,
        lon_label=LON_NORMAL,
        agent_id=track.agent_id,
        start_frame=start_frame,
        scene_id=scene_id,
        neighbor_ids=tuple(neighbor_ids),
    )
    window = normalize_frame(raw)
    lat, lon = label_maneuvers(window)
    return replace(window, lat_label=lat, lon_label=lon)


def split_windows(
    windows: Sequence[ScenarioWindow],
    rng: Rng,
    val_fraction: float = 0.1,
    test_fraction: float = 0.1,
    provenance: Provenance = "synthetic",
) -> DatasetSplit:
    """
    Shuffle windows into disjoint splits.

    Windows of one synthetic scene stay together; CSV windows (no scene) are
    grouped by (agent_id, start_frame).
    """
    groups: dict[tuple[int, ...], list[ScenarioWindow]] = {}
    for window in windows:
        key = (window.scene_id,) if window.scene_id >= 0 else window.key
        groups.setdefault(key, []).append(window)
    keys = sorted(groups)
    order = rng.permutation(len(keys))
    n_test = int(round(test_fraction * len(keys)))
    n_val = int(round(val_fraction * len(keys)))
    # the training share keeps at least one group
    while keys and n_test + n_val >= len(keys):
        if n_val >= n_test:
            n_val -= 1
        else:
            n_test -= 1
    test_idx = set(order[:n_test].tolist())
    val_idx = set(order[n_test : n_test + n_val].tolist())

    split = DatasetSplit([], [], [], provenance=provenance, seed=rng.seed)
    for index, key in enumerate(keys):
        if index in test_idx:
            split.test.extend(groups[key])
        elif index in val_idx:
            split.validation.extend(groups[key])
        else:
            split.train.extend(groups[key])
    return split


def windows_from_csv(path: str | Path, settings: DataSettings, rng: Rng) -> DatasetSplit:
    """Load, window and split a track file."""
    tracks = group_tracks(load_tracks_csv(path, source_hz=settings.source_hz))
    windows = build_windows(
        tracks,
        stride=settings.csv_stride,
        n_max=settings.n_max,
        radius_lat=settings.radius_lat,
        radius_lon=settings.radius_lon,
    )
    skipped = [a for a, t in tracks.items() if len(t) < WINDOW_FRAMES]
    if skipped:
        logger.warning("Agents too short for a window", count=len(skipped))
    return split_windows(
        windows, rng, settings.val_fraction, settings.test_fraction, provenance="csv"
    )


# ---------------------------------------------------------------------------
# Synthetic traffic
# ---------------------------------------------------------------------------


def _logistic(t: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * t))


def synth_scene(
    rng: Rng, scene_id: int, agents: int, settings: DataSettings
) -> dict[int, tuple[AgentTrack, tuple[int, int]]]:
    """
    One 41-frame highway scene.

    Returns each agent's track with the maneuver the generator executed.
    Time zero is the last history frame.
    """
    t = (np.arange(WINDOW_FRAMES) - (HISTORY_FRAMES - 1)) / FRAME_HZ
    future = np.clip(t, 0.0, None)
    maneuver_probs = np.array(
        [
            settings.lane_change_prob,
            settings.brake_prob,
            1.0 - settings.lane_change_prob - settings.brake_prob,
        ]
    )
    scene = {}
    for j in range(agents):
        stream = rng.split(j)
        lane = int(stream.integers(0, LANE_COUNT))
        speed = float(stream.uniform(8.0, 16.0))
        y0 = float(stream.uniform(0.0, 60.0))
        maneuver = stream.split(0).choice(maneuver_probs)

        x = np.full(WINDOW_FRAMES, LANE_WIDTH / 2 + LANE_WIDTH * lane)
        y = y0 + speed * (t - t[0])
        lat, lon = LAT_KEEP, LON_NORMAL
        if maneuver == 0:
            if lane == 0:
                direction = 1.0
            elif lane == LANE_COUNT - 1:
                direction = -1.0
            else:
                direction = 1.0 if stream.split(1).random() < 0.5 else -1.0
            crossing = float(stream.split(2).uniform(1.0, 2.5))
            x = x + direction * LANE_WIDTH * _logistic((t - crossing) / 0.35)
            lat = LAT_LEFT if direction > 0 else LAT_RIGHT
        elif maneuver == 1:
            decel = float(stream.split(3).uniform(2.0, 3.5))
            moving = np.minimum(future, speed / decel)
            y = y - speed * future + speed * moving - 0.5 * decel * moving**2
            lon = LON_BRAKING

        xy = np.stack([x, y], axis=1)
        xy = xy + settings.noise_std * stream.split(4).standard_normal(xy.shape)
        agent_id = scene_id * 1000 + j
        track = AgentTrack(agent_id, np.arange(WINDOW_FRAMES, dtype=np.int64), xy)
        scene[agent_id] = (track, (lat, lon))
    return scene


def synth_generate(
    rng: Rng,
    n_scenes: int,
    agents_per_scene: int,
    settings: DataSettings | None = None,
) -> DatasetSplit:
    """Generate lane-based kinematic scenes and split them by scene."""
    if n_scenes < 1:
        raise ContractViolation(f"n_scenes must be >= 1, got {n_scenes}")
    if agents_per_scene < 1:
        raise ContractViolation(f"agents_per_scene must be >= 1, got {agents_per_scene}")
    settings = settings or DataSettings()
    scenes_rng = rng.split(0)
    windows = []
    agreement = 0
    for scene_id in range(n_scenes):
        scene = synth_scene(scenes_rng.split(scene_id), scene_id, agents_per_scene, settings)
        tracks = {agent_id: track for agent_id, (track, _) in scene.items()}
        for window in build_windows(
            tracks,
            stride=settings.stride,
            n_max=settings.n_max,
            radius_lat=settings.radius_lat,
            radius_lon=settings.radius_lon,
            scene_id=scene_id,
        ):
            source = scene[window.agent_id][1]
            agreement += source == (window.lat_label, window.lon_label)
            windows.append(replace(window, source_labels=source))

    split = split_windows(
        windows, rng.split(1), settings.val_fraction, settings.test_fraction, "synthetic"
    )
    split.seed = rng.seed
    logger.info(
        "Synthetic dataset generated",
        scenes=n_scenes,
        windows=len(windows),
        label_agreement=agreement / max(len(windows), 1),
        train=len(split.train),
        validation=len(split.validation),
        test=len(split.test),
    )
    return split


# ---------------------------------------------------------------------------
# JSON-lines cache
# ---------------------------------------------------------------------------


def _encode_windows(windows: Sequence[ScenarioWindow]) -> bytes:
    lines = [
        json.dumps(w.to_record(), sort_keys=True, separators=(",", ":")) for w in windows
    ]
    return "".join(line + "\n" for line in lines).encode("utf-8")


def dataset_hash(windows: Sequence[ScenarioWindow]) -> str:
    """sha256 of the cache encoding of ``windows``."""
    return hashlib.sha256(_encode_windows(windows)).hexdigest()


def write_split_cache(split: DatasetSplit, directory: str | Path) -> Path:
    """Write one ``<split>.jsonl`` per split plus ``meta.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta: dict[str, Any] = {
        "format": CACHE_FORMAT,
        "provenance": split.provenance,
        "seed": split.seed,
        "counts": {},
        "hashes": {},
    }
    for name, windows in split.parts().items():
        payload = _encode_windows(windows)
        (directory / f"{name}.jsonl").write_bytes(payload)
        meta["counts"][name] = len(windows)
        meta["hashes"][name] = hashlib.sha256(payload).hexdigest()
    (directory / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    logger.info("Dataset cache written", directory=str(directory), **meta["counts"])
    return directory


def read_windows_jsonl(path: str | Path) -> list[ScenarioWindow]:
    """Windows stored one JSON record per line."""
    path = Path(path)
    windows = []
    for number, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            windows.append(ScenarioWindow.from_record(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise DataFormatError(f"{path}: bad record at line {number}: {e}") from e
    return windows


def read_split_cache(directory: str | Path) -> DatasetSplit:
    """Read a cache written by ``write_split_cache``."""
    directory = Path(directory)
    try:
        meta = json.loads((directory / "meta.json").read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{directory}/meta.json is not valid JSON: {e}") from e
    if meta.get("format") != CACHE_FORMAT:
        raise DataFormatError(f"{directory}: unsupported cache format {meta.get('format')!r}")
    parts = {name: read_windows_jsonl(directory / f"{name}.jsonl") for name in SPLIT_NAMES}
    return DatasetSplit(
        train=parts["train"],
        validation=parts["validation"],
        test=parts["test"],
        provenance=meta["provenance"],
        seed=meta.get("seed"),
    )
