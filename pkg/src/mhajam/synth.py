"""Synthetic multimodal driving episodes and the JSONL episode format.

Every scene is laid out in a global frame with the target approaching along
+y in the right-hand lane (x = +2). The target's past is the same whichever
exit it later takes, so identical histories can end in different futures.
Neighbours can change the target's future: a pedestrian on the crosswalk
ahead makes it stop, and a slower lead vehicle makes it slow down.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    InteractionSpace,
    MapElement,
    Pose2,
    VectorScene,
    from_target_frame,
    to_target_frame,
)

DT = 0.5
FORMAT_NAME = "mhajam-episodes"
FORMAT_VERSION = 1
LAYOUTS = ("straight", "t_intersection", "four_way", "curve")
DEFAULT_BRANCHES = {
    "straight": {"straight": 1.0},
    "t_intersection": {"left": 0.5, "right": 0.5},
    "four_way": {"left": 1 / 3, "straight": 1 / 3, "right": 1 / 3},
    "curve": {"straight": 1.0},
}

ROAD_HALF = 4.0
LANE = 2.0
BOX = 12.0
SIDEWALK = 3.0
FAR = 200.0


@dataclass(frozen=True)
class AgentState:
    x: float
    y: float
    v: float
    a: float
    yaw_rate: float


@dataclass
class AgentHistory:
    """States sampled at 2 Hz ending at the prediction instant.

    ``states`` is a (T, 5) array with columns x, y, v, a, yaw_rate in the
    target frame.
    """

    agent_id: str
    agent_class: str
    states: np.ndarray

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float).reshape(-1, 5)
        if self.agent_class not in ("vehicle", "pedestrian"):
            raise ValueError(f"unknown agent class {self.agent_class!r}")
        if not np.all(np.isfinite(self.states)):
            raise ValueError(f"agent {self.agent_id}: non-finite state")

    def __len__(self):
        return len(self.states)

    def state(self, i: int = -1) -> AgentState:
        return AgentState(*map(float, self.states[i]))

    @property
    def position(self) -> np.ndarray:
        """Position at the prediction instant."""
        return self.states[-1, :2]

    def to_dict(self):
        return {"agent_id": self.agent_id, "agent_class": self.agent_class,
                "states": self.states.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["agent_id"], d["agent_class"], d["states"])

    def __eq__(self, other):
        return (isinstance(other, AgentHistory) and self.agent_id == other.agent_id
                and self.agent_class == other.agent_class
                and np.array_equal(self.states, other.states))


@dataclass
class Episode:
    scene: VectorScene
    target_pose: Pose2
    target_history: AgentHistory
    neighbor_histories: list[AgentHistory]
    ground_truth_future: np.ndarray
    layout: str = "straight"
    branch: str = "straight"
    seed: int = 0

    def __post_init__(self):
        self.ground_truth_future = np.asarray(self.ground_truth_future, dtype=float).reshape(-1, 2)

    def validate(self, space: InteractionSpace | None = None, t_f: int | None = None,
                 history_len: int | None = None):
        space = space or InteractionSpace()
        if history_len is not None:
            for h in [self.target_history, *self.neighbor_histories]:
                if len(h) != history_len:
                    raise ValueError(f"agent {h.agent_id} has {len(h)} history samples, expected {history_len}")
        if t_f is not None and len(self.ground_truth_future) != t_f:
            raise ValueError(f"ground_truth_future has {len(self.ground_truth_future)} steps, expected {t_f}")
        for nb in self.neighbor_histories:
            if not space.contains(nb.position):
                raise ValueError(f"neighbour {nb.agent_id} outside the interaction space")
        return self

    def to_dict(self):
        p = self.target_pose
        return {
            "scene": self.scene.to_dict(),
            "target_pose": [p.x, p.y, p.heading],
            "target_history": self.target_history.to_dict(),
            "neighbor_histories": [n.to_dict() for n in self.neighbor_histories],
            "ground_truth_future": self.ground_truth_future.tolist(),
            "layout": self.layout,
            "branch": self.branch,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            scene=VectorScene.from_dict(d["scene"]),
            target_pose=Pose2(*d["target_pose"]),
            target_history=AgentHistory.from_dict(d["target_history"]),
            neighbor_histories=[AgentHistory.from_dict(n) for n in d["neighbor_histories"]],
            ground_truth_future=d["ground_truth_future"],
            layout=d["layout"],
            branch=d["branch"],
            seed=d["seed"],
        )

    def __eq__(self, other):
        return isinstance(other, Episode) and self.to_dict() == other.to_dict()


@dataclass
class ScenarioSpec:
    layout: str = "four_way"
    n_vehicles: tuple[int, int] = (1, 4)
    n_pedestrians: tuple[int, int] = (0, 3)
    speed_range: tuple[float, float] = (5.0, 10.0)
    branch_probabilities: dict[str, float] | None = None
    approach_range: tuple[float, float] = (0.0, 25.0)
    noise: float = 1.0
    yield_probability: float = 0.2
    lead_probability: float = 0.3
    t_h: float = 2.0
    t_f: float = 6.0

    def __post_init__(self):
        if self.layout not in LAYOUTS:
            raise ValueError(f"layout must be one of {LAYOUTS}, got {self.layout!r}")
        if self.branch_probabilities is None:
            self.branch_probabilities = dict(DEFAULT_BRANCHES[self.layout])
        probs = np.array(list(self.branch_probabilities.values()), dtype=float)
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError("branch_probabilities must be nonnegative and sum to 1")
        unknown = set(self.branch_probabilities) - set(DEFAULT_BRANCHES[self.layout])
        if unknown:
            raise ValueError(f"layout {self.layout} has no exits {sorted(unknown)}")
        for name in ("n_vehicles", "n_pedestrians", "speed_range", "approach_range"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                raise ValueError(f"{name} must be an increasing nonnegative range")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")

    @property
    def history_len(self) -> int:
        return int(round(self.t_h / DT)) + 1

    @property
    def future_len(self) -> int:
        return int(round(self.t_f / DT))


# ------------------------------------------------------------------ kinematics

def derive_kinematics(positions, dt: float = DT) -> np.ndarray:
    """Finite-difference (x, y, v, a, yaw_rate) from sampled positions.

    Speed is the central-difference displacement norm over ``2 dt``;
    acceleration and yaw rate are central differences of speed and of the
    unwrapped heading. End samples use one-sided differences.
    """
    p = np.asarray(positions, dtype=float).reshape(-1, 2)
    n = len(p)
    if n < 3:
        raise ValueError("derive_kinematics needs at least 3 positions")
    disp = np.empty_like(p)
    disp[1:-1] = (p[2:] - p[:-2]) / 2.0
    disp[0] = p[1] - p[0]
    disp[-1] = p[-1] - p[-2]
    v = np.hypot(disp[:, 0], disp[:, 1]) / dt
    moving = v > 1e-9
    heading = np.zeros(n)
    heading[moving] = np.arctan2(disp[moving, 0], disp[moving, 1])
    # carry the last known heading through stationary samples
    last = heading[np.argmax(moving)] if moving.any() else 0.0
    for i in range(n):
        if moving[i]:
            last = heading[i]
        else:
            heading[i] = last
    heading = np.unwrap(heading)
    a = np.gradient(v, dt)
    yaw_rate = np.gradient(heading, dt)
    return np.column_stack([p, v, a, yaw_rate])


# ----------------------------------------------------------------------- paths

class Path:
    """Polyline parametrised by arc length."""

    def __init__(self, points):
        pts = np.asarray(points, dtype=float)
        seg = np.hypot(*np.diff(pts, axis=0).T)
        keep = np.concatenate([[True], seg > 1e-12])
        self.points = pts[keep]
        self.s = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(self.points, axis=0).T))])

    @property
    def length(self):
        return float(self.s[-1])

    def at(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        x = np.interp(s, self.s, self.points[:, 0])
        y = np.interp(s, self.s, self.points[:, 1])
        return np.stack([x, y], axis=-1)

    def heading_at(self, s: float) -> float:
        i = int(np.clip(np.searchsorted(self.s, s, side="right") - 1, 0, len(self.points) - 2))
        d = self.points[i + 1] - self.points[i]
        return math.atan2(d[0], d[1])

    def s_of_y(self, y: float) -> float:
        """Arc length where a path that starts heading +y reaches ordinate ``y``."""
        dy = np.diff(self.points[:, 1])
        k = len(dy) if np.all(dy > 0) else int(np.argmin(dy > 0))
        return float(np.interp(y, self.points[:k + 1, 1], self.s[:k + 1]))


def _line(a, b, step=1.0):
    a, b = np.asarray(a, float), np.asarray(b, float)
    n = max(2, int(math.ceil(np.linalg.norm(b - a) / step)) + 1)
    t = np.linspace(0, 1, n)[:, None]
    return a + t * (b - a)


def _arc(center, radius, a0, a1, step=0.5):
    n = max(3, int(math.ceil(abs(a1 - a0) * radius / step)) + 1)
    ang = np.linspace(a0, a1, n)
    return np.column_stack([center[0] + radius * np.cos(ang), center[1] + radius * np.sin(ang)])


def _rect(x0, y0, x1, y1):
    return [[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]]


def _join(*parts):
    out = [parts[0]]
    for p in parts[1:]:
        out.append(p[1:])
    return np.concatenate(out)


@dataclass
class Layout:
    scene: VectorScene
    anchor: tuple[float, float]
    branches: dict[str, Path]
    crosswalk_y: tuple[float, float] | None
    other_paths: list[Path] = field(default_factory=list)
    sidewalk_paths: list[Path] = field(default_factory=list)


def _band(center_path: np.ndarray, half: float) -> np.ndarray:
    """Closed polygon of a constant-width band around a polyline."""
    d = np.gradient(center_path, axis=0)
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    normal = np.column_stack([d[:, 1], -d[:, 0]])
    left = center_path - half * normal
    right = center_path + half * normal
    poly = np.concatenate([right, left[::-1], right[:1]])
    return poly


def build_layout(kind: str, y0: float, curve_sign: float = 1.0) -> Layout:
    """Geometry for one layout; the junction or curve starts at ordinate ``y0``."""
    el = []
    H, L = ROAD_HALF, LANE
    if kind in ("straight", "curve"):
        y_end = y0 if kind == "curve" else FAR
        el.append(MapElement("drivable", _rect(-H, -FAR, H, y_end)))
        el.append(MapElement("sidewalk", _rect(H, -FAR, H + SIDEWALK, y_end)))
        el.append(MapElement("sidewalk", _rect(-H - SIDEWALK, -FAR, -H, y_end)))
        el.append(MapElement("lane_divider", [[0.0, -FAR], [0.0, y_end]]))
        cw = (y0 - 4.0, y0 - 1.0) if kind == "straight" else None
        if cw:
            el.append(MapElement("crosswalk", _rect(-H, cw[0], H, cw[1])))
        approach = _line((L, -FAR), (L, y0 if kind == "curve" else y0 - 1.0))
        if kind == "straight":
            ahead = _line(approach[-1], (L, FAR))
            branches = {"straight": Path(_join(approach, ahead))}
            oncoming = [Path(_line((-L, FAR), (-L, -FAR)))]
        else:
            # road centre bends by 90 degrees on a radius-40 arc, +1 right, -1 left
            R = 40.0
            s = curve_sign
            cx = s * R
            if s > 0:
                centre = _arc((cx, y0), R, math.pi, math.pi / 2)
            else:
                centre = _arc((cx, y0), R, 0.0, math.pi / 2)
            exit_dir = np.array([s, 0.0])
            centre = _join(centre, _line(centre[-1], centre[-1] + exit_dir * FAR))
            band = _band(centre, H)
            el.append(MapElement("drivable", band))
            el.append(MapElement("lane_divider", centre))
            if s > 0:
                lane = _arc((cx, y0), R - L, math.pi, math.pi / 2)
                on = _arc((cx, y0), R + L, math.pi / 2, math.pi)
            else:
                lane = _arc((cx, y0), R + L, 0.0, math.pi / 2)
                on = _arc((cx, y0), R - L, math.pi / 2, 0.0)
            lane = _join(lane, _line(lane[-1], lane[-1] + exit_dir * FAR))
            branches = {"straight": Path(_join(approach, lane))}
            on = _join(_line(on[0] + exit_dir * FAR, on[0]), on, _line(on[-1], (on[-1][0], -FAR)))
            oncoming = [Path(on)]
        return Layout(VectorScene(el), (0.0, y0), branches, cw, oncoming,
                      [Path(_line((H + 1.5, -FAR), (H + 1.5, y_end))),
                       Path(_line((-H - 1.5, y_end), (-H - 1.5, -FAR)))])

    # junctions: a drivable box at [-BOX, BOX] x [y0, y0 + 2 BOX]
    yc = y0 + BOX
    exits = ("left", "right") if kind == "t_intersection" else ("left", "straight", "right")
    el.append(MapElement("drivable", _rect(-H, -FAR, H, y0)))
    el.append(MapElement("drivable", _rect(-BOX, y0, BOX, y0 + 2 * BOX)))
    el.append(MapElement("drivable", _rect(-FAR, yc - H, -BOX, yc + H)))
    el.append(MapElement("drivable", _rect(BOX, yc - H, FAR, yc + H)))
    if kind == "four_way":
        el.append(MapElement("drivable", _rect(-H, y0 + 2 * BOX, H, FAR)))
    for sx in (-1, 1):
        el.append(MapElement("sidewalk", _rect(min(sx * H, sx * (H + SIDEWALK)), -FAR,
                                               max(sx * H, sx * (H + SIDEWALK)), y0 - 4.0)))
        el.append(MapElement("sidewalk", _rect(min(sx * BOX, sx * FAR), yc + H,
                                               max(sx * BOX, sx * FAR), yc + H + SIDEWALK)))
    el.append(MapElement("lane_divider", [[0.0, -FAR], [0.0, y0]]))
    el.append(MapElement("lane_divider", [[-FAR, yc], [-BOX, yc]]))
    el.append(MapElement("lane_divider", [[BOX, yc], [FAR, yc]]))
    cw = (y0 - 4.0, y0 - 1.0)
    el.append(MapElement("crosswalk", _rect(-H, cw[0], H, cw[1])))
    if kind == "four_way":
        el.append(MapElement("lane_divider", [[0.0, y0 + 2 * BOX], [0.0, FAR]]))
        el.append(MapElement("crosswalk", _rect(-H, y0 + 2 * BOX + 1.0, H, y0 + 2 * BOX + 4.0)))

    approach = _line((L, -FAR), (L, y0))
    branches = {}
    right = _arc((BOX, y0), BOX - L, math.pi, math.pi / 2)
    branches["right"] = Path(_join(approach, right, _line(right[-1], (FAR, right[-1][1]))))
    left = _arc((-BOX, y0), BOX + L, 0.0, math.pi / 2)
    branches["left"] = Path(_join(approach, left, _line(left[-1], (-FAR, left[-1][1]))))
    if "straight" in exits:
        branches["straight"] = Path(_join(approach, _line((L, y0), (L, FAR))))
    branches = {k: branches[k] for k in exits}

    others = [
        Path(_line((-FAR, yc - L), (FAR, yc - L))),
        Path(_line((FAR, yc + L), (-FAR, yc + L))),
    ]
    if kind == "four_way":
        others.append(Path(_line((-L, FAR), (-L, -FAR))))
    else:
        turn = _arc((-BOX, y0), BOX - L, math.pi / 2, 0.0)
        others.append(Path(_join(_line((-FAR, yc - L), turn[0]), turn, _line(turn[-1], (-L, -FAR)))))
    walks = [
        Path(_line((H + 1.5, -FAR), (H + 1.5, y0 - 4.0))),
        Path(_line((-H - 1.5, y0 - 4.0), (-H - 1.5, -FAR))),
        Path(_line((BOX, yc + H + 1.5), (FAR, yc + H + 1.5))),
        Path(_line((-FAR, yc + H + 1.5), (-BOX, yc + H + 1.5))),
    ]
    return Layout(VectorScene(el), (0.0, yc), branches, cw, others, walks)


# ------------------------------------------------------------------ generation

def _times(spec: ScenarioSpec):
    hist = -DT * np.arange(spec.history_len - 1, -1, -1)
    fut = DT * np.arange(1, spec.future_len + 1)
    return hist, fut


def _history(global_positions, target: Pose2, agent_id: str, cls: str) -> AgentHistory:
    local = to_target_frame(global_positions, target)
    return AgentHistory(agent_id, cls, derive_kinematics(local))


def filter_to_interaction_space(
    target_history: AgentHistory,
    neighbors: list[AgentHistory],
    space: InteractionSpace | None = None,
) -> list[AgentHistory]:
    """Keep neighbours whose position at the prediction instant is inside the (closed) space."""
    space = space or InteractionSpace()
    return [n for n in neighbors if bool(space.contains(n.position))]


def _speed_profile(t, v0, accel, lead, stop_dist):
    """Arc length travelled by the target ``t`` seconds after the prediction instant."""
    t = np.asarray(t, dtype=float)
    past = t <= 0
    if accel < 0:
        tt = np.minimum(t, -v0 / accel)
    else:
        tt = t
    s = v0 * tt + 0.5 * accel * tt * tt
    if lead is not None:
        _, v_lead = lead
        tau = 1.5
        s_lead = v_lead * t + (v0 - v_lead) * tau * (1 - np.exp(-t / tau))
        s = np.where(past, s, s_lead)
    if stop_dist is not None:
        dec = v0 * v0 / (2 * stop_dist)
        tt = np.clip(t, 0.0, v0 / dec)
        s_stop = v0 * tt - 0.5 * dec * tt * tt
        s = np.where(past, s, np.minimum(s, s_stop))
    return s


def _near_anchor(path: Path, anchor, rng, spread: float) -> float:
    d = np.hypot(*(path.points - np.asarray(anchor)).T)
    s_near = path.s[int(np.argmin(d))]
    return float(np.clip(s_near + rng.uniform(-spread, spread), 0.0, path.length))


def generate_episode(spec: ScenarioSpec, seed: int, space: InteractionSpace | None = None) -> Episode:
    """Deterministically sample one episode for ``(spec, seed)``."""
    space = space or InteractionSpace()
    rng = np.random.default_rng(np.uint64(seed % 2**64))
    hist_t, fut_t = _times(spec)
    jitter = 0.05 * spec.noise

    # canonical frame: target on the approach lane at y = 0 heading +y
    curve_sign = float(rng.choice([-1.0, 1.0]))
    y0 = 1.0 + rng.uniform(*spec.approach_range)
    layout = build_layout(spec.layout, y0, curve_sign)
    names = list(spec.branch_probabilities)
    probs = np.array([spec.branch_probabilities[k] for k in names])
    branch = names[int(rng.choice(len(names), p=probs / probs.sum()))]
    path = layout.branches[branch]
    s0 = path.s_of_y(0.0)

    v0 = rng.uniform(*spec.speed_range)
    accel = spec.noise * rng.uniform(-0.3, 0.3)
    stop_dist = None
    if layout.crosswalk_y is not None:
        d_cw = layout.crosswalk_y[0] - 1.0
        if rng.random() < spec.yield_probability and d_cw > v0 * v0 / 12.0:
            stop_dist = d_cw
    lead = None
    if rng.random() < spec.lead_probability:
        lead = (rng.uniform(10.0, 30.0), rng.uniform(0.0, 0.8 * v0))

    hist_s = s0 + v0 * hist_t + 0.5 * accel * hist_t ** 2
    hist_xy = path.at(hist_s)
    hist_xy[:-1] += jitter * rng.uniform(-1, 1, size=(len(hist_t) - 1, 2))
    local_pose = Pose2(float(hist_xy[-1, 0]), float(hist_xy[-1, 1]), path.heading_at(s0))
    future_xy = to_target_frame(path.at(s0 + _speed_profile(fut_t, v0, accel, lead, stop_dist)), local_pose)
    target_hist = _history(hist_xy, local_pose, "target", "vehicle")

    neighbors = []
    if lead is not None:
        gap, v_lead = lead
        neighbors.append(_history(path.at(s0 + gap + v_lead * hist_t), local_pose, "lead", "vehicle"))
    if stop_dist is not None:
        cy = 0.5 * sum(layout.crosswalk_y)
        walk = rng.choice([-1.0, 1.0]) * rng.uniform(1.0, 1.6)
        xs = rng.uniform(-3.0, 3.0) + walk * hist_t
        neighbors.append(_history(np.column_stack([xs, np.full_like(xs, cy)]), local_pose,
                                  "ped_cross", "pedestrian"))
    for i in range(int(rng.integers(spec.n_vehicles[0], spec.n_vehicles[1] + 1))):
        p = layout.other_paths[int(rng.integers(len(layout.other_paths)))]
        v = rng.uniform(*spec.speed_range)
        s_h = np.clip(_near_anchor(p, layout.anchor, rng, 35.0) + v * hist_t, 0.0, p.length)
        pts = p.at(s_h) + jitter * rng.uniform(-1, 1, size=(len(hist_t), 2))
        neighbors.append(_history(pts, local_pose, f"veh{i}", "vehicle"))
    for i in range(int(rng.integers(spec.n_pedestrians[0], spec.n_pedestrians[1] + 1))):
        p = layout.sidewalk_paths[int(rng.integers(len(layout.sidewalk_paths)))]
        v = rng.uniform(0.8, 1.8)
        s_h = np.clip(_near_anchor(p, layout.anchor, rng, 25.0) + v * hist_t, 0.0, p.length)
        neighbors.append(_history(p.at(s_h), local_pose, f"ped{i}", "pedestrian"))
    neighbors = filter_to_interaction_space(target_hist, neighbors, space)

    # place the canonical scene somewhere in the world
    world = Pose2(rng.uniform(-500, 500), rng.uniform(-500, 500), rng.uniform(-math.pi, math.pi))
    scene = VectorScene([
        MapElement(e.cls, from_target_frame(e.points, world), e.lane_direction)
        for e in layout.scene.elements
    ])
    gxy = from_target_frame([local_pose.x, local_pose.y], world)
    target = Pose2(float(gxy[0]), float(gxy[1]), local_pose.heading + world.heading)
    ep = Episode(scene, target, target_hist, neighbors, future_xy, spec.layout, branch, int(seed))
    return ep.validate(space, spec.future_len, spec.history_len)


def generate_dataset(spec: ScenarioSpec, n: int, seed: int, space=None) -> list[Episode]:
    """``n`` episodes with per-episode seeds drawn from ``seed``."""
    seeds = np.random.default_rng(seed).integers(0, 2**63 - 1, size=n)
    return [generate_episode(spec, int(s), space) for s in seeds]


# ------------------------------------------------------------------------- I/O

class DatasetFormatError(ValueError):
    pass


def write_dataset(path, episodes, meta: dict | None = None):
    header = {"format": FORMAT_NAME, "version": FORMAT_VERSION}
    if meta:
        header["meta"] = meta
    with open(path, "w") as f:
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for ep in episodes:
            f.write(json.dumps(ep.to_dict(), sort_keys=True) + "\n")


def read_dataset(path) -> list[Episode]:
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or not lines[0].strip():
        raise DatasetFormatError(f"{path}: missing header")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise DatasetFormatError(f"{path}: line 1: malformed header ({e})") from e
    if not isinstance(header, dict) or header.get("format") != FORMAT_NAME:
        raise DatasetFormatError(f"{path}: missing header")
    if header.get("version") != FORMAT_VERSION:
        raise DatasetFormatError(
            f"{path}: dataset version {header.get('version')} unsupported (expected {FORMAT_VERSION})"
        )
    episodes = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            episodes.append(Episode.from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise DatasetFormatError(f"{path}: line {lineno}: {e}") from e
    return episodes
