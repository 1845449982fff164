"""SVG rendering of one scenario and its multi-modal prediction."""

from __future__ import annotations

import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import structlog

from cdstraj.model.decoder import MODE_COUNT, MultiModalPrediction, mode_name
from cdstraj.numerics import ContractViolation
from cdstraj.scenario_data import FUTURE_FRAMES, ScenarioWindow

logger = structlog.get_logger(__name__)

UNITS_PER_METER = 10.0
MARGIN = 50.0
# opacity floor for improbable modes
MIN_OPACITY = 0.15

HISTORY_STYLE = {"stroke": "#1f77b4", "stroke-width": "3"}
TRUTH_STYLE = {"stroke": "#2ca02c", "stroke-width": "3", "stroke-dasharray": "6,4"}
MODE_STYLE = {"stroke": "#d62728", "stroke-width": "2"}
NEIGHBOR_STYLE = {"stroke": "#7f7f7f", "stroke-width": "2"}


def _fmt(value: float) -> str:
    return f"{value:.2f}"


def _points(xy: np.ndarray, offset: np.ndarray, height: float) -> str:
    # y grows upward on the road, downward in SVG
    px = (xy[:, 0] - offset[0]) * UNITS_PER_METER + MARGIN
    py = height - ((xy[:, 1] - offset[1]) * UNITS_PER_METER + MARGIN)
    return " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in zip(px, py, strict=True))


def render_svg(window: ScenarioWindow, prediction: MultiModalPrediction) -> bytes:
    """Serialize the scene; identical inputs give identical bytes."""
    if prediction.means.shape[1:] != (FUTURE_FRAMES, 2):
        raise ContractViolation(
            f"prediction means must be (M, 25, 2), got {prediction.means.shape}"
        )
    neighbors = [window.neighbor_histories[j] for j in np.flatnonzero(window.presence_mask)]
    everything = np.concatenate(
        [window.target_history, window.target_future, *prediction.means, *neighbors]
    )
    low = everything.min(axis=0)
    width = (everything[:, 0].max() - low[0]) * UNITS_PER_METER + 2 * MARGIN
    height = (everything[:, 1].max() - low[1]) * UNITS_PER_METER + 2 * MARGIN

    svg = ET.Element(
        "svg",
        {
            "xmlns": "http://www.w3.org/2000/svg",
            "width": _fmt(width),
            "height": _fmt(height),
            "viewBox": f"0 0 {_fmt(width)} {_fmt(height)}",
        },
    )
    ET.SubElement(svg, "title").text = f"agent {window.agent_id} frame {window.start_frame}"

    group = ET.SubElement(svg, "g", {"id": "neighbors", "fill": "none"})
    for slot, history in zip(np.flatnonzero(window.presence_mask), neighbors, strict=True):
        ET.SubElement(
            group,
            "polyline",
            {
                "class": "neighbor",
                "data-slot": str(int(slot)),
                "points": _points(history, low, height),
            },
            **NEIGHBOR_STYLE,
        )

    ET.SubElement(
        svg,
        "polyline",
        {"id": "history", "fill": "none", "points": _points(window.target_history, low, height)},
        **HISTORY_STYLE,
    )
    ET.SubElement(
        svg,
        "polyline",
        {"id": "truth", "fill": "none", "points": _points(window.target_future, low, height)},
        **TRUTH_STYLE,
    )

    group = ET.SubElement(svg, "g", {"id": "modes", "fill": "none"})
    anchor = window.target_history[-1:]
    top = float(np.max(prediction.mode_probs))
    for mode in range(prediction.num_modes):
        path = np.concatenate([anchor, prediction.means[mode]])
        coords = _points(path, low, height).split(" ")
        prob = float(prediction.mode_probs[mode])
        opacity = max(prob / top if top > 0 else 0.0, MIN_OPACITY)
        name = mode_name(mode) if prediction.num_modes == MODE_COUNT else "single"
        ET.SubElement(
            group,
            "path",
            {
                "class": "mode",
                "data-mode": name,
                "data-prob": f"{prob:.4f}",
                "d": "M " + " L ".join(coords),
                "stroke-opacity": f"{opacity:.3f}",
            },
            **MODE_STYLE,
        )
    return ET.tostring(svg, encoding="utf-8", xml_declaration=True)


def emit_plot(
    window: ScenarioWindow, prediction: MultiModalPrediction, path: str | Path
) -> Path:
    """Write the scene as an SVG file (1 m = 10 user units)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(render_svg(window, prediction))
    logger.info("Plot written", path=str(path), modes=prediction.num_modes)
    return path
