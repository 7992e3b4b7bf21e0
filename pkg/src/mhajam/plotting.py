"""SVG rendering of an episode, its predicted modes and attention maps."""

from __future__ import annotations

import json
import xml.etree.ElementTree as ET

import numpy as np

from .geometry import InteractionSpace, to_target_frame
from .model import ModelConfig, PredictionSet
from .synth import Episode

PX_PER_M = 10.0
CLASS_STYLE = {
    "drivable": {"fill": "#d9d9d9", "stroke": "none"},
    "crosswalk": {"fill": "#fff2a8", "stroke": "none"},
    "sidewalk": {"fill": "#c7e0c0", "stroke": "none"},
    "lane_divider": {"fill": "none", "stroke": "#ffffff", "stroke-width": "1.5",
                     "stroke-dasharray": "6 4"},
}
MODE_COLORS = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2",
               "#7f7f7f", "#bcbd22", "#17becf")


# -------------------------------------------------------------- attention JSON

def attention_payload(pred: PredictionSet, cfg: ModelConfig, block: str | None = None,
                      episode_seed: int | None = None) -> dict:
    """Serializable attention maps: one (M, N) grid of alpha per head."""
    if not pred.attention:
        raise ValueError("prediction carries no attention maps")
    block = block or next(iter(pred.attention))
    if block not in pred.attention:
        raise KeyError(f"no attention block {block!r}; have {sorted(pred.attention)}")
    alpha = np.asarray(pred.attention[block], dtype=float)
    return {
        "block": block,
        "grid": list(alpha.shape[1:]),
        "heads": alpha.tolist(),
        "probs": np.asarray(pred.probs, dtype=float).tolist(),
        "episode_seed": episode_seed,
        "config": cfg.to_dict(),
    }


def save_attention_json(path, payload: dict):
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_attention_json(path) -> dict:
    with open(path) as fh:
        payload = json.load(fh)
    for key in ("block", "grid", "heads", "config"):
        if key not in payload:
            raise ValueError(f"{path}: attention file lacks {key!r}")
    M, N = payload["grid"]
    heads = np.asarray(payload["heads"], dtype=float)
    if heads.ndim != 3 or heads.shape[1:] != (M, N):
        raise ValueError(f"{path}: heads do not match grid {M}x{N}")
    return payload


# ------------------------------------------------------------------ rendering

class _Canvas:
    def __init__(self, space: InteractionSpace):
        self.space = space
        w, h = space.width * PX_PER_M, space.length * PX_PER_M
        self.root = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", width=f"{w:g}",
                               height=f"{h:g}", viewBox=f"0 0 {w:g} {h:g}")

    def xy(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        x = (pts[:, 0] + self.space.lateral_extent) * PX_PER_M
        y = (self.space.ahead_extent - pts[:, 1]) * PX_PER_M
        return np.stack([x, y], axis=1)

    def points_attr(self, pts) -> str:
        return " ".join(f"{x:.2f},{y:.2f}" for x, y in self.xy(pts))

    def group(self, cls: str) -> ET.Element:
        return ET.SubElement(self.root, "g", {"class": cls})


def render_svg(episode: Episode, pred: PredictionSet | None, cfg: ModelConfig,
               attention: dict | None = None, head: int | None = None) -> str:
    """Draw map, past track, ground truth, predicted modes and optionally one head's attention.

    ``attention`` is a payload from :func:`attention_payload` (or the JSON file);
    ``head`` is 1-based and defaults to the most probable mode.
    """
    space = cfg.space
    cv = _Canvas(space)
    ET.SubElement(cv.root, "rect", {"width": "100%", "height": "100%", "fill": "#f7f7f7"})

    layer = cv.group("map")
    for el in episode.scene.elements:
        pts = to_target_frame(el.points, episode.target_pose)
        style = CLASS_STYLE[el.cls]
        tag = "polygon" if el.is_polygon else "polyline"
        ET.SubElement(layer, tag, {"class": el.cls, "points": cv.points_attr(pts), **style})

    if attention is not None:
        _draw_attention(cv, attention, pred, head)

    past = cv.group("past")
    for nb in episode.neighbor_histories:
        ET.SubElement(past, "polyline", {"class": "neighbor", "points": cv.points_attr(nb.states[:, :2]),
                                         "fill": "none", "stroke": "#555555", "stroke-width": "2"})
    ET.SubElement(past, "polyline", {"class": "target-past",
                                     "points": cv.points_attr(episode.target_history.states[:, :2]),
                                     "fill": "none", "stroke": "#000000", "stroke-width": "3"})
    if episode.ground_truth_future is not None:
        gt = np.vstack([[0.0, 0.0], episode.ground_truth_future])
        ET.SubElement(cv.group("ground-truth"), "polyline", {
            "class": "ground-truth", "points": cv.points_attr(gt), "fill": "none",
            "stroke": "#000000", "stroke-width": "2", "stroke-dasharray": "4 3"})

    if pred is not None:
        modes = cv.group("modes")
        for l in range(pred.n_modes):
            color = MODE_COLORS[l % len(MODE_COLORS)]
            traj = np.vstack([[0.0, 0.0], pred.mu[l]])
            ET.SubElement(modes, "polyline", {
                "class": "mode", "data-mode": str(l + 1), "data-prob": repr(float(pred.probs[l])),
                "points": cv.points_attr(traj), "fill": "none", "stroke": color,
                "stroke-width": "2", "stroke-opacity": f"{0.35 + 0.65 * float(pred.probs[l]):.3f}"})
            x, y = cv.xy(pred.mu[l, -1])[0]
            label = ET.SubElement(modes, "text", {"class": "mode-label", "x": f"{x + 3:.2f}",
                                                  "y": f"{y - 3:.2f}", "font-size": "11",
                                                  "fill": color})
            label.text = f"P{l + 1}={float(pred.probs[l]):.2f}"
    ET.SubElement(cv.root, "circle", {"class": "target", "cx": f"{cv.xy([0, 0])[0, 0]:.2f}",
                                      "cy": f"{cv.xy([0, 0])[0, 1]:.2f}", "r": "5",
                                      "fill": "#000000"})
    return ET.tostring(cv.root, encoding="unicode")


def _draw_attention(cv: _Canvas, attention: dict, pred: PredictionSet | None, head: int | None):
    heads = np.asarray(attention["heads"], dtype=float)
    if head is None:
        probs = attention.get("probs") or (pred.probs.tolist() if pred is not None else None)
        head = int(np.argmax(probs)) + 1 if probs else 1
    if not 1 <= head <= len(heads):
        raise ValueError(f"head {head} out of range 1..{len(heads)}")
    alpha = heads[head - 1]
    M, N = alpha.shape
    peak = float(alpha.max())
    cw = cv.space.width / N * PX_PER_M
    ch = cv.space.length / M * PX_PER_M
    g = cv.group("attention")
    g.set("data-head", str(head))
    g.set("data-block", str(attention["block"]))
    for m in range(M):
        for n in range(N):
            a = float(alpha[m, n])
            ET.SubElement(g, "rect", {
                "class": "attention-cell", "data-row": str(m), "data-col": str(n),
                "data-alpha": repr(a), "x": f"{n * cw:.3f}", "y": f"{m * ch:.3f}",
                "width": f"{cw:.3f}", "height": f"{ch:.3f}", "fill": "#d62728",
                "fill-opacity": repr(a / peak if peak > 0 else 0.0)})


def save_svg(path, svg: str):
    with open(path, "w") as fh:
        fh.write('<?xml version="1.0" encoding="UTF-8"?>\n')
        fh.write(svg)
