"""Tests for evaluation and plotting modules."""

import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from cdstraj.evaluation import (
    REPORT_COLUMNS,
    REPORT_HEADER,
    ablation_run,
    baseline_reports,
    constant_velocity_baseline,
    constant_velocity_windows,
    evaluate_model,
    maneuver_accuracy,
    rmse_by_horizon,
    write_report,
    zero_velocity_baseline,
)
from cdstraj.model import CDSTrajModel, MultiModalPrediction
from cdstraj.numerics import ContractViolation, Rng
from cdstraj.plotting import MIN_OPACITY, emit_plot, render_svg
from cdstraj.scenario_data import (
    FUTURE_FRAMES,
    HISTORY_FRAMES,
    LAT_KEEP,
    LAT_LEFT,
    LON_BRAKING,
    LON_NORMAL,
    ScenarioWindow,
    synth_generate,
)
from cdstraj.training import Trainer

SVG = "{http://www.w3.org/2000/svg}"


def make_window(lat: int = LAT_KEEP, lon: int = LON_NORMAL) -> ScenarioWindow:
    """Helper to create a window with a straight 10 m/s target and one neighbor."""
    t = np.arange(HISTORY_FRAMES + FUTURE_FRAMES) * 2.0
    path = np.stack([np.zeros_like(t), t], axis=1)
    neighbors = np.zeros((2, HISTORY_FRAMES, 2))
    neighbors[0] = path[:HISTORY_FRAMES] + [3.5, 5.0]
    return ScenarioWindow(
        target_history=path[:HISTORY_FRAMES],
        neighbor_histories=neighbors,
        presence_mask=np.array([True, False]),
        target_future=path[HISTORY_FRAMES:],
        neighbor_futures=np.zeros((2, FUTURE_FRAMES, 2)),
        lat_label=lat,
        lon_label=lon,
        agent_id=1,
        start_frame=0,
    )


def make_prediction(modes: int = 6) -> MultiModalPrediction:
    """Helper to create a prediction with fanned-out straight modes."""
    ahead = np.arange(1, FUTURE_FRAMES + 1) * 2.0 + 30.0
    means = np.stack([np.column_stack([np.full(25, 0.5 * m), ahead]) for m in range(modes)])
    probs = np.arange(1, modes + 1, dtype=np.float64)
    return MultiModalPrediction(
        means=means,
        sigmas=np.ones((modes, 25, 2)),
        rhos=np.zeros((modes, 25)),
        mode_probs=probs / probs.sum(),
    )


class TestRmseByHorizon:
    """Tests for RMSE at the closing frame of each horizon."""

    def test_perfect(self):
        """Test perfect predictions score zero at every horizon."""
        truths = np.random.default_rng(0).normal(size=(4, 25, 2))

        report = rmse_by_horizon(truths, truths)

        assert report.rmse == (0.0, 0.0, 0.0, 0.0, 0.0)
        assert report.n_samples == 4

    def test_two_scenarios(self):
        """Test errors of 1 m and 7 m at the last frame give 5 m at 5 s."""
        truths = np.zeros((2, 25, 2))
        predictions = truths.copy()
        predictions[0, 24, 0] = 1.0
        predictions[1, 24, 1] = 7.0

        report = rmse_by_horizon(predictions, truths)

        assert report.at(5) == pytest.approx(5.0)
        assert report.at(4) == 0.0

    def test_closing_frame(self):
        """Test the 1 s horizon reads frame index 4 only."""
        truths = np.zeros((1, 25, 2))
        predictions = truths.copy()
        predictions[0, 3] = 9.0
        predictions[0, 4] = [3.0, 4.0]

        report = rmse_by_horizon(predictions, truths)

        assert report.at(1) == pytest.approx(5.0)
        assert report.at(2) == 0.0

    def test_translation_invariance(self):
        """Test a common translation leaves the report unchanged."""
        rng = np.random.default_rng(1)
        predictions = rng.normal(size=(3, 25, 2))
        truths = rng.normal(size=(3, 25, 2))
        offset = np.array([120.0, -45.0])

        a = rmse_by_horizon(predictions, truths).rmse
        b = rmse_by_horizon(predictions + offset, truths + offset).rmse

        np.testing.assert_allclose(a, b, atol=1e-9)

    def test_empty(self):
        """Test an empty evaluation set is rejected."""
        with pytest.raises(ContractViolation, match="at least one scenario"):
            rmse_by_horizon(np.zeros((0, 25, 2)), np.zeros((0, 25, 2)))

    def test_shape_mismatch(self):
        """Test predictions and truths must align."""
        with pytest.raises(ContractViolation, match="must both be"):
            rmse_by_horizon(np.zeros((2, 25, 2)), np.zeros((2, 24, 2)))


class TestBaselines:
    """Tests for the reference predictors."""

    def test_constant_velocity_exact_on_straight_track(self):
        """Test constant velocity reproduces a straight constant-speed future."""
        window = make_window()

        np.testing.assert_allclose(constant_velocity_baseline(window), window.target_future)

    def test_zero_velocity(self):
        """Test holding position on a 10 m/s track errs 10 m per second."""
        window = make_window()

        report = rmse_by_horizon(
            [zero_velocity_baseline(window)], [window.target_future], "zero_velocity"
        )

        assert report.rmse == pytest.approx((10.0, 20.0, 30.0, 40.0, 50.0))

    def test_reports(self):
        """Test both baselines are reported on the same samples."""
        windows = [make_window(), make_window()]

        reports = baseline_reports(windows, "synthetic", "abc")

        assert [r.model for r in reports] == ["zero_velocity", "constant_velocity"]
        assert all(r.n_samples == 2 and r.data_hash == "abc" for r in reports)
        assert reports[1].at(5) == pytest.approx(0.0, abs=1e-9)

    def test_constant_velocity_windows(self):
        """Test only lane-keeping, non-braking windows are kept."""
        windows = [make_window(), make_window(lat=LAT_LEFT), make_window(lon=LON_BRAKING)]

        kept = constant_velocity_windows(windows)

        assert kept == [windows[0]]


class TestWriteReport:
    """Tests for the report CSV."""

    def test_layout(self, tmp_path):
        """Test the comment line, column order and one row per horizon."""
        report = rmse_by_horizon(np.ones((2, 25, 2)), np.zeros((2, 25, 2)), "cdstraj", "synthetic")

        path = write_report([report], tmp_path / "out" / "report.csv")
        lines = path.read_text().splitlines()

        assert lines[0] == REPORT_HEADER
        assert lines[1] == ",".join(REPORT_COLUMNS)
        assert len(lines) == 7
        model, horizon, rmse, count, dataset, _ = lines[2].split(",")
        assert (model, horizon, count, dataset) == ("cdstraj", "1", "2", "synthetic")
        assert float(rmse) == pytest.approx(math.sqrt(2.0))
        assert b"\r\n" not in path.read_bytes()


class TestModelEvaluation:
    """Tests for evaluating a model."""

    def test_evaluate_model(self, settings, split):
        """Test the report covers every window with finite errors."""
        model = CDSTrajModel(settings)

        report = evaluate_model(model, split.test, "cdstraj", "synthetic", "h")

        assert report.n_samples == len(split.test)
        assert all(np.isfinite(v) and v >= 0 for v in report.rmse)

    def test_empty_windows(self, settings):
        """Test an empty evaluation set is rejected."""
        with pytest.raises(ContractViolation, match="empty"):
            evaluate_model(CDSTrajModel(settings), [])

    def test_maneuver_accuracy(self, settings, split):
        """Test accuracies are shares in [0, 1] and the joint never exceeds either head."""
        accuracy = maneuver_accuracy(CDSTrajModel(settings), split.test)

        assert set(accuracy) == {"lat", "lon", "joint"}
        assert all(0.0 <= v <= 1.0 for v in accuracy.values())
        assert accuracy["joint"] <= min(accuracy["lat"], accuracy["lon"])

    def test_maneuver_accuracy_unconditioned(self, make_settings, split):
        """Test accuracy needs maneuver heads."""
        model = CDSTrajModel(make_settings(decoder={"conditioned": False}))

        with pytest.raises(ContractViolation, match="maneuver-conditioned"):
            maneuver_accuracy(model, split.test)

    @pytest.mark.slow
    def test_ablation_run(self, settings, split):
        """Test rows A-F share one dataset hash and sample set."""
        rows = ablation_run(settings, split, seeds=[1, 2])

        assert [row.config.name for row in rows] == ["A", "B", "C", "D", "E", "F"]
        assert len({row.report.data_hash for row in rows}) == 1
        assert all(row.report.n_samples == len(split.test) for row in rows)
        assert all(len(row.val_mse) == 2 for row in rows)
        assert all(np.isfinite(row.report.rmse).all() for row in rows)

    @pytest.mark.slow
    def test_full_model_not_worse(self, make_settings):
        """Test row F's mean validation MSE over three seeds is within 1.5x of the best row."""
        settings = make_settings(
            data={"n_scenes": 30},
            decoder={"hidden_dim": 32},
            train={"stage1_epochs": 8, "stage2_epochs": 0, "lr": 0.02},
        )
        split = synth_generate(Rng(31), 30, 2, settings.data)

        rows = ablation_run(settings, split, seeds=[1, 2, 3])

        mean_mse = {row.config.name: float(np.mean(row.val_mse)) for row in rows}
        others = [mean_mse[name] for name in "ABCDE"]
        assert all(len(row.val_mse) == 3 for row in rows)
        assert mean_mse["F"] <= 1.5 * min(others)

    @pytest.mark.slow
    def test_learning_signal(self, make_settings):
        """Test stage one halves validation MSE and beats holding position by half at 5 s."""
        settings = make_settings(
            data={"n_scenes": 40},
            decoder={"hidden_dim": 32},
            train={"stage1_epochs": 8, "stage2_epochs": 0, "lr": 0.02},
        )
        split = synth_generate(Rng(21), 40, 2, settings.data)
        trainer = Trainer(settings, split)
        untrained = trainer.evaluate(split.validation).mse

        trainer.fit()

        held_out = split.validation + split.test
        model_5s = evaluate_model(trainer.model, held_out).at(5)
        zero_5s = baseline_reports(held_out)[0].at(5)
        assert trainer.metrics[-1].val_mse <= 0.5 * untrained
        assert model_5s <= 0.5 * zero_5s


class TestRenderSvg:
    """Tests for SVG rendering."""

    def test_deterministic(self):
        """Test identical inputs give identical bytes."""
        window, prediction = make_window(), make_prediction()

        assert render_svg(window, prediction) == render_svg(window, prediction)

    def test_elements(self):
        """Test one path per mode and one polyline per present neighbor."""
        root = ET.fromstring(render_svg(make_window(), make_prediction()))

        modes = root.findall(f".//{SVG}path[@class='mode']")
        assert len(modes) == 6
        assert [m.get("data-mode") for m in modes][:2] == ["left/normal", "left/braking"]
        assert len(root.findall(f".//{SVG}polyline[@class='neighbor']")) == 1
        assert root.find(f"{SVG}polyline[@id='history']") is not None
        assert root.find(f"{SVG}polyline[@id='truth']") is not None

    def test_opacity_follows_probability(self):
        """Test the most probable mode is opaque and others fade."""
        root = ET.fromstring(render_svg(make_window(), make_prediction()))

        opacities = [float(m.get("stroke-opacity")) for m in root.iter(f"{SVG}path")]

        assert opacities[-1] == 1.0
        assert opacities == sorted(opacities)
        assert min(opacities) > 0.0

    def test_opacity_proportional(self):
        """Test opacity is p / max(p) down to the floor."""
        prediction = make_prediction()
        probs = np.array([0.01, 0.05, 0.1, 0.14, 0.2, 0.5])
        prediction = MultiModalPrediction(
            prediction.means, prediction.sigmas, prediction.rhos, probs
        )
        root = ET.fromstring(render_svg(make_window(), prediction))

        opacities = [float(m.get("stroke-opacity")) for m in root.iter(f"{SVG}path")]

        expected = np.maximum(probs / probs.max(), MIN_OPACITY)
        np.testing.assert_allclose(opacities, expected, atol=5e-4)
        assert opacities[:2] == [MIN_OPACITY, MIN_OPACITY]

    def test_single_mode(self):
        """Test an unconditioned prediction draws one mode."""
        root = ET.fromstring(render_svg(make_window(), make_prediction(modes=1)))

        modes = root.findall(f".//{SVG}path")
        assert [m.get("data-mode") for m in modes] == ["single"]

    def test_y_axis_up(self):
        """Test later history points sit higher on the canvas."""
        root = ET.fromstring(render_svg(make_window(), make_prediction()))
        points = root.find(f"{SVG}polyline[@id='history']").get("points").split(" ")

        ys = [float(p.split(",")[1]) for p in points]
        assert ys == sorted(ys, reverse=True)
        assert ys[0] - ys[1] == pytest.approx(20.0)

    def test_bad_shape(self):
        """Test means must have 25 frames."""
        prediction = make_prediction()
        bad = MultiModalPrediction(
            prediction.means[:, :10], prediction.sigmas, prediction.rhos, prediction.mode_probs
        )

        with pytest.raises(ContractViolation, match="prediction means"):
            render_svg(make_window(), bad)

    def test_emit_plot(self, tmp_path, settings, split):
        """Test a model prediction is written as an SVG file."""
        window = split.test[0]
        prediction = CDSTrajModel(settings).predict_full(window)

        path = emit_plot(window, prediction, tmp_path / "plots" / "scene.svg")

        root = ET.fromstring(path.read_bytes())
        assert root.tag == f"{SVG}svg"
        assert len(root.findall(f".//{SVG}path[@class='mode']")) == 6
