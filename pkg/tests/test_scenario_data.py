"""Tests for scenario data module."""

import json

import numpy as np
import pytest

from cdstraj.config import DataSettings
from cdstraj.numerics import ContractViolation, Rng
from cdstraj.scenario_data import (
    FUTURE_FRAMES,
    HISTORY_FRAMES,
    LAT_KEEP,
    LAT_LEFT,
    LAT_RIGHT,
    LON_BRAKING,
    LON_NORMAL,
    AgentTrack,
    DataFormatError,
    ScenarioWindow,
    WindowBatch,
    build_windows,
    dataset_hash,
    group_tracks,
    iter_batches,
    label_maneuvers,
    load_tracks_csv,
    normalize_frame,
    read_split_cache,
    read_windows_jsonl,
    select_neighbors,
    split_windows,
    synth_generate,
    write_split_cache,
)


def make_track(
    agent_id: int = 1,
    frames: int = 41,
    x: float = 0.0,
    y0: float = 0.0,
    speed: float = 10.0,
    start: int = 0,
) -> AgentTrack:
    """Helper to create a straight constant-speed track at 5 Hz."""
    frame_ids = np.arange(start, start + frames, dtype=np.int64)
    y = y0 + speed * (frame_ids - start) / 5.0
    return AgentTrack(agent_id, frame_ids, np.stack([np.full(frames, x), y], axis=1))


def make_window(
    history: np.ndarray | None = None,
    future: np.ndarray | None = None,
    n_max: int = 2,
) -> ScenarioWindow:
    """Helper to create a window with a straight 10 m/s target and no neighbors."""
    t = np.arange(HISTORY_FRAMES + FUTURE_FRAMES) * 2.0
    path = np.stack([np.zeros_like(t), t], axis=1)
    return ScenarioWindow(
        target_history=path[:HISTORY_FRAMES] if history is None else history,
        neighbor_histories=np.zeros((n_max, HISTORY_FRAMES, 2)),
        presence_mask=np.zeros(n_max, dtype=bool),
        target_future=path[HISTORY_FRAMES:] if future is None else future,
        neighbor_futures=np.zeros((n_max, FUTURE_FRAMES, 2)),
        lat_label=LAT_KEEP,
        lon_label=LON_NORMAL,
        agent_id=1,
        start_frame=0,
    )


def write_tracks(tmp_path, rows, header="agent_id,frame,x,y") -> str:
    """Helper to write a track CSV."""
    path = tmp_path / "tracks.csv"
    lines = [header] + [",".join(str(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")
    return str(path)


def small_settings(**overrides) -> DataSettings:
    """Helper to create data settings for small synthetic runs."""
    values = {"n_scenes": 20, "agents_per_scene": 3}
    values.update(overrides)
    return DataSettings(**values)


class TestLoadTracksCsv:
    """Tests for CSV ingestion."""

    def test_decimates_10hz(self, tmp_path):
        """Test two 100-frame 10 Hz agents become 50-point 5 Hz tracks."""
        rows = [(a, f, float(a), f * 0.5) for a in (1, 2) for f in range(100)]
        path = write_tracks(tmp_path, rows)

        tracks = group_tracks(load_tracks_csv(path, source_hz=10))

        assert sorted(tracks) == [1, 2]
        assert len(tracks[1]) == 50
        assert len(tracks[2]) == 50

    def test_decimation_preserves_timestamps(self, tmp_path):
        """Test frame k at 5 Hz is frame 2k at 10 Hz."""
        rows = [(1, f, 0.0, float(f)) for f in range(10)]
        path = write_tracks(tmp_path, rows)

        points = load_tracks_csv(path, source_hz=10)

        assert [p.frame for p in points] == [0, 1, 2, 3, 4]
        assert [p.y for p in points] == [0.0, 2.0, 4.0, 6.0, 8.0]

    def test_5hz_unchanged(self, tmp_path):
        """Test 5 Hz input keeps every frame."""
        rows = [(1, f, 0.0, float(f)) for f in range(7)]
        path = write_tracks(tmp_path, rows)

        assert len(load_tracks_csv(path, source_hz=5)) == 7

    def test_header_only(self, tmp_path):
        """Test an empty file with header gives no points."""
        path = write_tracks(tmp_path, [])

        assert load_tracks_csv(path) == []

    def test_non_numeric_x(self, tmp_path):
        """Test a malformed row is reported with its line number."""
        path = write_tracks(tmp_path, [(1, 0, 0.0, 0.0), (1, 1, "abc", 1.0)])

        with pytest.raises(DataFormatError, match="line 3"):
            load_tracks_csv(path)

    def test_non_monotone_frames(self, tmp_path):
        """Test decreasing frames are rejected listing the agent."""
        rows = [(4, 0, 0.0, 0.0), (4, 2, 0.0, 1.0), (4, 1, 0.0, 2.0), (5, 0, 0.0, 0.0)]
        path = write_tracks(tmp_path, rows)

        with pytest.raises(DataFormatError, match=r"agents \[4\]"):
            load_tracks_csv(path)

    def test_wrong_header(self, tmp_path):
        """Test the header must match exactly."""
        path = write_tracks(tmp_path, [(1, 0, 0.0, 0.0)], header="id,frame,x,y")

        with pytest.raises(DataFormatError, match="header must be"):
            load_tracks_csv(path)

    def test_invalid_rate(self, tmp_path):
        """Test only 5 and 10 Hz are accepted."""
        with pytest.raises(ContractViolation):
            load_tracks_csv(write_tracks(tmp_path, []), source_hz=25)


class TestBuildWindows:
    """Tests for windowing."""

    def test_exact_length(self):
        """Test 41 frames give one window."""
        assert len(build_windows({1: make_track(frames=41)})) == 1

    def test_stride_one(self):
        """Test 45 frames with stride 1 give five windows."""
        assert len(build_windows({1: make_track(frames=45)})) == 5

    def test_too_short(self):
        """Test 40 frames give no window."""
        assert build_windows({1: make_track(frames=40)}) == []

    @pytest.mark.parametrize("frames,stride", [(41, 3), (60, 4), (100, 7), (82, 41)])
    def test_count_law(self, frames, stride):
        """Test floor((F - 41) / s) + 1 windows per agent."""
        windows = build_windows({1: make_track(frames=frames)}, stride=stride)

        assert len(windows) == (frames - 41) // stride + 1

    def test_gap_splits_runs(self):
        """Test windows never straddle missing frames."""
        first = make_track(frames=41)
        second = make_track(frames=41, start=50)
        frames = np.concatenate([first.frames, second.frames])
        track = AgentTrack(1, frames, np.concatenate([first.xy, second.xy]))

        windows = build_windows({1: track})

        assert [w.start_frame for w in windows] == [0, 50]

    def test_invalid_stride(self):
        """Test stride must be positive."""
        with pytest.raises(ContractViolation, match="stride"):
            build_windows({1: make_track()}, stride=0)

    def test_window_invariants(self):
        """Test lengths and origin anchoring of emitted windows."""
        tracks = {1: make_track(1, y0=100.0), 2: make_track(2, x=3.5, y0=110.0)}

        for window in build_windows(tracks):
            assert window.target_history.shape == (HISTORY_FRAMES, 2)
            assert window.target_future.shape == (FUTURE_FRAMES, 2)
            np.testing.assert_array_equal(window.target_history[-1], [0.0, 0.0])
            assert window.presence_mask.sum() == 1

    def test_neighbor_relative_position(self):
        """Test neighbors are expressed in the target frame."""
        tracks = {1: make_track(1, y0=100.0), 2: make_track(2, x=3.5, y0=110.0)}

        window = build_windows(tracks)[0]

        np.testing.assert_allclose(window.neighbor_histories[0, -1], [3.5, 10.0])
        assert window.neighbor_ids == (2,)


class TestSelectNeighbors:
    """Tests for neighbor selection."""

    def test_no_other_agents(self):
        """Test a lone agent has every slot masked."""
        ids, mask = select_neighbors(1, 15, {1: make_track(1)}, n_max=4)

        assert ids == []
        assert not mask.any()

    def test_cap(self):
        """Test ten in-radius agents are capped to the eight nearest."""
        tracks = {0: make_track(0)}
        for j in range(1, 11):
            tracks[j] = make_track(j, y0=5.0 * j)

        ids, mask = select_neighbors(0, 15, tracks, n_max=8)

        assert ids == list(range(1, 9))
        assert mask.all()

    def test_longitudinal_threshold(self):
        """Test an agent 100 m ahead is outside a 90 m radius."""
        tracks = {1: make_track(1), 2: make_track(2, y0=100.0)}

        ids, _ = select_neighbors(1, 15, tracks, radius_lon=90.0)

        assert ids == []

    def test_ties_by_agent_id(self):
        """Test equal distances are ordered by agent id regardless of input order."""
        ahead = make_track(9, y0=10.0)
        behind = make_track(3, y0=-10.0)
        target = make_track(5)

        first, _ = select_neighbors(5, 15, {9: ahead, 5: target, 3: behind})
        second, _ = select_neighbors(5, 15, {3: behind, 9: ahead, 5: target})

        assert first == second == [3, 9]

    def test_target_absent(self):
        """Test the target must be present at the anchor frame."""
        with pytest.raises(ContractViolation, match="no point"):
            select_neighbors(1, 99, {1: make_track(1)})


class TestNormalizeFrame:
    """Tests for translation to the target frame."""

    def test_origin_shift(self):
        """Test the last history point becomes the origin."""
        history = np.zeros((HISTORY_FRAMES, 2))
        history[-1] = [5.0, 120.0]
        future = np.full((FUTURE_FRAMES, 2), [6.0, 130.0])

        window = normalize_frame(make_window(history=history, future=future))

        np.testing.assert_array_equal(window.target_history[-1], [0.0, 0.0])
        np.testing.assert_array_equal(window.target_history[0], [-5.0, -120.0])
        np.testing.assert_array_equal(window.target_future[0], [1.0, 10.0])
        np.testing.assert_array_equal(window.origin, [5.0, 120.0])

    def test_idempotent(self):
        """Test normalizing twice equals normalizing once."""
        once = normalize_frame(make_window())
        twice = normalize_frame(once)

        np.testing.assert_array_equal(once.target_history, twice.target_history)
        np.testing.assert_array_equal(once.origin, twice.origin)

    def test_distances_preserved(self):
        """Test pairwise distances survive the translation."""
        tracks = {1: make_track(1, y0=3.0), 2: make_track(2, x=3.5, y0=40.0)}
        window = build_windows(tracks)[0]
        raw = tracks[2].xy[15] - tracks[1].xy[15]

        assert np.linalg.norm(window.neighbor_histories[0, -1]) == pytest.approx(
            np.linalg.norm(raw)
        )

    def test_masked_slots_stay_zero(self):
        """Test absent neighbor slots remain all-zero."""
        window = normalize_frame(make_window())

        assert not window.neighbor_histories.any()
        assert not window.neighbor_futures.any()


class TestLabelManeuvers:
    """Tests for maneuver labeling."""

    def test_straight(self):
        """Test a constant-velocity future is keep/normal."""
        assert label_maneuvers(normalize_frame(make_window())) == (LAT_KEEP, LON_NORMAL)

    def test_left(self):
        """Test a future ending 3.5 m left is a left change."""
        window = normalize_frame(make_window())
        future = window.target_future.copy()
        future[:, 0] = np.linspace(0.0, 3.5, FUTURE_FRAMES)

        lat, lon = label_maneuvers(make_window(history=window.target_history, future=future))

        assert (lat, lon) == (LAT_LEFT, LON_NORMAL)

    def test_right(self):
        """Test a future ending 3.5 m right is a right change."""
        window = normalize_frame(make_window())
        future = window.target_future.copy()
        future[:, 0] = np.linspace(0.0, -3.5, FUTURE_FRAMES)

        lat, _ = label_maneuvers(make_window(history=window.target_history, future=future))

        assert lat == LAT_RIGHT

    def test_braking(self):
        """Test a mean future speed of 6 m/s after 10 m/s is braking."""
        window = normalize_frame(make_window())
        steps = np.arange(1, FUTURE_FRAMES + 1) * 6.0 / 5.0
        future = np.stack([np.zeros(FUTURE_FRAMES), steps], axis=1)

        _, lon = label_maneuvers(make_window(history=window.target_history, future=future))

        assert lon == LON_BRAKING


class TestBatches:
    """Tests for batching."""

    def test_stack(self):
        """Test windows stack along the batch axis."""
        batch = WindowBatch.from_windows([make_window(), make_window()])

        assert batch.size == 2
        assert batch.neighbor_histories.shape == (2, 2, HISTORY_FRAMES, 2)
        assert batch.lat_labels.tolist() == [LAT_KEEP, LAT_KEEP]

    def test_empty(self):
        """Test an empty list cannot be batched."""
        with pytest.raises(ContractViolation, match="empty"):
            WindowBatch.from_windows([])

    def test_mixed_slot_counts(self):
        """Test windows must agree on neighbor slots."""
        with pytest.raises(ContractViolation, match="neighbor slots"):
            WindowBatch.from_windows([make_window(n_max=2), make_window(n_max=3)])

    def test_shuffle_covers_all(self):
        """Test shuffled batches visit every window once."""
        windows = [make_window() for _ in range(7)]

        sizes = [b.size for b in iter_batches(windows, 3, Rng(0))]

        assert sizes == [3, 3, 1]


class TestSplitWindows:
    """Tests for dataset splitting."""

    def test_disjoint(self):
        """Test splits share no (agent, start) key."""
        tracks = {j: make_track(j, frames=60, x=3.5 * (j % 3), y0=8.0 * j) for j in range(6)}
        windows = build_windows(tracks, stride=2)

        split = split_windows(windows, Rng(1), 0.2, 0.2, provenance="csv")
        keys = [{w.key for w in part} for part in split.parts().values()]

        assert not keys[0] & keys[1]
        assert not keys[0] & keys[2]
        assert not keys[1] & keys[2]
        assert sum(len(k) for k in keys) == len(windows)

    def test_keeps_training_group(self):
        """Test a single group always lands in training."""
        split = split_windows([make_window()], Rng(0), 0.4, 0.4)

        assert len(split.train) == 1


class TestSynthGenerate:
    """Tests for the synthetic traffic generator."""

    def test_deterministic(self):
        """Test a fixed seed yields identical dataset bytes."""
        a = synth_generate(Rng(3), 10, 3, small_settings())
        b = synth_generate(Rng(3), 10, 3, small_settings())

        for part_a, part_b in zip(a.parts().values(), b.parts().values(), strict=True):
            assert dataset_hash(part_a) == dataset_hash(part_b)

    def test_single_agent_scenes(self):
        """Test one agent per scene leaves every neighbor slot empty."""
        split = synth_generate(Rng(0), 10, 1, small_settings(agents_per_scene=1))

        windows = split.train + split.validation + split.test
        assert windows
        assert not any(w.presence_mask.any() for w in windows)

    def test_scene_windows_share_split(self):
        """Test all windows of a scene land in one split."""
        split = synth_generate(Rng(2), 20, 3, small_settings())
        owner = {}

        for name, windows in split.parts().items():
            for window in windows:
                assert owner.setdefault(window.scene_id, name) == name

    def test_records_source_labels(self):
        """Test generator labels are kept next to the derived labels."""
        split = synth_generate(Rng(4), 5, 2, small_settings())

        assert all(w.source_labels is not None for w in split.train)

    def test_rejects_zero_scenes(self):
        """Test at least one scene is required."""
        with pytest.raises(ContractViolation):
            synth_generate(Rng(0), 0, 3)

    @pytest.mark.slow
    def test_label_agreement(self):
        """Test generator and derived labels agree on at least 95% of windows."""
        split = synth_generate(Rng(0), 1000, 3, small_settings(n_scenes=1000))
        windows = split.train + split.validation + split.test

        agree = sum(w.source_labels == (w.lat_label, w.lon_label) for w in windows)

        assert agree / len(windows) >= 0.95


class TestSplitCache:
    """Tests for the JSON-lines dataset cache."""

    def test_write_then_read(self, tmp_path):
        """Test cached windows come back with identical hashes and labels."""
        split = synth_generate(Rng(1), 8, 3, small_settings())

        write_split_cache(split, tmp_path)
        loaded = read_split_cache(tmp_path)

        assert loaded.provenance == "synthetic"
        assert loaded.seed == split.seed
        for name in ("train", "validation", "test"):
            assert dataset_hash(getattr(loaded, name)) == dataset_hash(getattr(split, name))

    def test_meta_counts(self, tmp_path):
        """Test meta.json records counts and provenance."""
        split = synth_generate(Rng(1), 8, 3, small_settings())

        write_split_cache(split, tmp_path)
        meta = json.loads((tmp_path / "meta.json").read_text())

        assert meta["counts"]["train"] == len(split.train)
        assert meta["provenance"] == "synthetic"

    def test_labels_stored_as_names(self, tmp_path):
        """Test maneuver labels are written as class names."""
        split = synth_generate(Rng(1), 8, 3, small_settings())
        write_split_cache(split, tmp_path)

        record = json.loads((tmp_path / "train.jsonl").read_text().splitlines()[0])

        assert record["lat"] in ("left", "keep", "right")
        assert record["lon"] in ("normal", "braking")

    def test_bad_record(self, tmp_path):
        """Test a corrupt line names its position."""
        path = tmp_path / "broken.jsonl"
        path.write_text('{"agent_id": 1}\n')

        with pytest.raises(DataFormatError, match="line 1"):
            read_windows_jsonl(path)

    def test_unsupported_format(self, tmp_path):
        """Test the cache format version is checked."""
        (tmp_path / "meta.json").write_text(json.dumps({"format": 99}))

        with pytest.raises(DataFormatError, match="unsupported cache format"):
            read_split_cache(tmp_path)
