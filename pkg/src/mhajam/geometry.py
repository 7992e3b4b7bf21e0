"""Target-centric frames, map rasterization and the exact distance field.

Conventions
-----------
Headings are compass-style: measured from the global +y axis, positive
toward +x, so a pose with heading ``psi`` moves along ``(sin psi, cos psi)``.
The target frame puts the target at the origin with +y along its heading
and +x to its right (right-handed).

Raster row 0 is the far-ahead edge of the interaction space and column 0
the left edge, so pixel ``(r, c)`` has its center at
``x = -lateral + (c + 0.5) * res`` and ``y = ahead - (r + 0.5) * res``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

CLASSES = ("drivable", "lane_divider", "crosswalk", "sidewalk")
POLYLINE_CLASSES = frozenset({"lane_divider"})


def wrap_angle(theta):
    """Wrap an angle (scalar or array) into (-pi, pi]."""
    wrapped = np.pi - np.mod(np.pi - np.asarray(theta, dtype=float), 2 * np.pi)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class Pose2:
    x: float
    y: float
    heading: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "heading", wrap_angle(self.heading))

    @property
    def forward(self) -> np.ndarray:
        return np.array([math.sin(self.heading), math.cos(self.heading)])

    @property
    def right(self) -> np.ndarray:
        return np.array([math.cos(self.heading), -math.sin(self.heading)])


@dataclass(frozen=True)
class InteractionSpace:
    lateral_extent: float = 25.0
    ahead_extent: float = 40.0
    behind_extent: float = 10.0

    def __post_init__(self):
        for name in ("lateral_extent", "ahead_extent", "behind_extent"):
            if not getattr(self, name) > 0:
                raise ValueError(f"InteractionSpace.{name} must be > 0")

    @property
    def width(self) -> float:
        return 2.0 * self.lateral_extent

    @property
    def length(self) -> float:
        return self.ahead_extent + self.behind_extent

    def contains(self, points) -> np.ndarray:
        """Closed-region membership test for target-frame points (..., 2)."""
        p = np.asarray(points, dtype=float)
        x, y = p[..., 0], p[..., 1]
        return (
            (np.abs(x) <= self.lateral_extent)
            & (y <= self.ahead_extent)
            & (y >= -self.behind_extent)
        )


def to_target_frame(points, target: Pose2) -> np.ndarray:
    """Map global point(s) of shape (..., 2) into the target frame."""
    p = np.asarray(points, dtype=float)
    d = p - np.array([target.x, target.y])
    s, c = math.sin(target.heading), math.cos(target.heading)
    x = d[..., 0] * c - d[..., 1] * s
    y = d[..., 0] * s + d[..., 1] * c
    return np.stack([x, y], axis=-1)


def from_target_frame(points, target: Pose2) -> np.ndarray:
    """Inverse of :func:`to_target_frame`."""
    p = np.asarray(points, dtype=float)
    s, c = math.sin(target.heading), math.cos(target.heading)
    gx = p[..., 0] * c + p[..., 1] * s + target.x
    gy = -p[..., 0] * s + p[..., 1] * c + target.y
    return np.stack([gx, gy], axis=-1)


@dataclass
class MapElement:
    cls: str
    points: np.ndarray
    lane_direction: float | None = None

    def __post_init__(self):
        if self.cls not in CLASSES:
            raise ValueError(f"unknown map class {self.cls!r}")
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 2)
        if self.cls not in POLYLINE_CLASSES:
            if len(self.points) < 2 or not np.array_equal(self.points[0], self.points[-1]):
                raise ValueError("polygon must be closed (first point == last point)")
            if len(np.unique(self.points[:-1], axis=0)) < 3:
                raise ValueError("polygon needs at least 3 distinct vertices")

    @property
    def is_polygon(self) -> bool:
        return self.cls not in POLYLINE_CLASSES

    def __eq__(self, other):
        return (
            isinstance(other, MapElement)
            and self.cls == other.cls
            and self.lane_direction == other.lane_direction
            and np.array_equal(self.points, other.points)
        )


@dataclass
class VectorScene:
    elements: list[MapElement] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "elements": [
                {
                    "class": e.cls,
                    "points": e.points.tolist(),
                    "lane_direction": e.lane_direction,
                }
                for e in self.elements
            ]
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VectorScene":
        return cls(
            [
                MapElement(e["class"], e["points"], e.get("lane_direction"))
                for e in d["elements"]
            ]
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> "VectorScene":
        return cls.from_dict(json.loads(s))

    def translated(self, offset) -> "VectorScene":
        o = np.asarray(offset, dtype=float)
        return VectorScene(
            [MapElement(e.cls, e.points + o, e.lane_direction) for e in self.elements]
        )


@dataclass
class RasterMap:
    """Binary (4, H, W) bird's-eye raster in the target frame."""

    data: np.ndarray
    resolution: float
    space: InteractionSpace
    skipped: list[str] = field(default_factory=list)

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def drivable(self) -> np.ndarray:
        return self.data[0]

    def pixel_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Target-frame (x, y) of every pixel center, each of shape (H, W)."""
        return pixel_centers(self.space, self.resolution, self.height, self.width)

    def to_pixel(self, points) -> np.ndarray:
        """Continuous (row, col) coordinates; integer values hit pixel centers."""
        p = np.asarray(points, dtype=float)
        col = (p[..., 0] + self.space.lateral_extent) / self.resolution - 0.5
        row = (self.space.ahead_extent - p[..., 1]) / self.resolution - 0.5
        return np.stack([row, col], axis=-1)

    def to_pgm(self, channel: int) -> str:
        """Plain-text P2 dump of one channel (values 0/1)."""
        plane = self.data[channel].astype(int)
        lines = ["P2", f"{self.width} {self.height}", "1"]
        lines += [" ".join(str(v) for v in row) for row in plane]
        return "\n".join(lines) + "\n"


def raster_shape(space: InteractionSpace, resolution: float) -> tuple[int, int]:
    h = space.length / resolution
    w = space.width / resolution
    if abs(h - round(h)) > 1e-9 or abs(w - round(w)) > 1e-9:
        raise ValueError(
            f"resolution {resolution} does not tile the {space.width}x{space.length} m space"
        )
    return int(round(h)), int(round(w))


def pixel_centers(space, resolution, height, width):
    xs = -space.lateral_extent + (np.arange(width) + 0.5) * resolution
    ys = space.ahead_extent - (np.arange(height) + 0.5) * resolution
    return np.meshgrid(xs, ys)


def points_in_polygon(px, py, poly) -> np.ndarray:
    """Even-odd containment of points in a closed polygon; boundary counts as inside."""
    px = np.asarray(px, dtype=float)
    py = np.asarray(py, dtype=float)
    inside = np.zeros(px.shape, dtype=bool)
    on_edge = np.zeros(px.shape, dtype=bool)
    for (x0, y0), (x1, y1) in zip(poly[:-1], poly[1:]):
        crosses = (y0 > py) != (y1 > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_at = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (px < x_at)
        cross = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)
        within = (
            (px >= min(x0, x1)) & (px <= max(x0, x1))
            & (py >= min(y0, y1)) & (py <= max(y0, y1))
        )
        on_edge |= within & (np.abs(cross) <= 1e-12 * max(1.0, math.hypot(x1 - x0, y1 - y0)))
    return inside | on_edge


def polygon_area(poly) -> float:
    p = np.asarray(poly, dtype=float)
    return 0.5 * abs(float(np.sum(p[:-1, 0] * p[1:, 1] - p[1:, 0] * p[:-1, 1])))


def _rasterize_polyline(plane, pts, space, resolution):
    h, w = plane.shape
    for a, b in zip(pts[:-1], pts[1:]):
        n = max(2, int(math.ceil(np.linalg.norm(b - a) / (resolution / 4))) + 1)
        t = np.linspace(0.0, 1.0, n)[:, None]
        s = a + t * (b - a)
        col = np.floor((s[:, 0] + space.lateral_extent) / resolution).astype(int)
        row = np.floor((space.ahead_extent - s[:, 1]) / resolution).astype(int)
        ok = (row >= 0) & (row < h) & (col >= 0) & (col < w)
        plane[row[ok], col[ok]] = 1


def rasterize(
    scene: VectorScene,
    target: Pose2,
    space: InteractionSpace | None = None,
    resolution: float = 0.5,
) -> RasterMap:
    """Rasterize a global-frame scene into the target-centric interaction space."""
    space = space or InteractionSpace()
    if not resolution > 0:
        raise ValueError("resolution must be > 0")
    h, w = raster_shape(space, resolution)
    data = np.zeros((len(CLASSES), h, w), dtype=np.uint8)
    cx, cy = pixel_centers(space, resolution, h, w)
    skipped = []
    for i, elem in enumerate(scene.elements):
        ch = CLASSES.index(elem.cls)
        local = to_target_frame(elem.points, target)
        if elem.is_polygon:
            if polygon_area(local) <= 0.0:
                skipped.append(f"element {i}: degenerate {elem.cls} polygon")
                logger.warning("skipping degenerate polygon (element %d)", i)
                continue
            lo, hi = local.min(axis=0), local.max(axis=0)
            if (hi[0] < -space.lateral_extent or lo[0] > space.lateral_extent
                    or hi[1] < -space.behind_extent or lo[1] > space.ahead_extent):
                continue
            data[ch] |= points_in_polygon(cx, cy, local).astype(np.uint8)
        else:
            _rasterize_polyline(data[ch], local, space, resolution)
    return RasterMap(data, float(resolution), space, skipped)


def _lower_envelope_1d(f: list[int]) -> list[int]:
    """Squared distance transform of one line of integer costs.

    Lower envelope of parabolas ``(q - v)^2 + f[v]``; intersections are compared
    by cross-multiplication so the result is exact integer arithmetic.
    """
    n = len(f)
    inf = None
    sites = [i for i in range(n) if f[i] is not inf]
    out = [0] * n
    if not sites:
        return [None] * n
    v = [sites[0]]
    # z boundaries stored as fractions (num, den), den > 0
    z = []
    for q in sites[1:]:
        while True:
            p = v[-1]
            num = (f[q] + q * q) - (f[p] + p * p)
            den = 2 * (q - p)
            if z and num * z[-1][1] <= z[-1][0] * den:
                v.pop()
                z.pop()
                continue
            v.append(q)
            z.append((num, den))
            break
    k = 0
    for q in range(n):
        while k < len(z) and z[k][0] < q * z[k][1]:
            k += 1
        out[q] = (q - v[k]) ** 2 + f[v[k]]
    return out


def squared_edt(mask: np.ndarray) -> np.ndarray:
    """Exact squared Euclidean distance (in pixels) to the nearest True pixel.

    Two separable passes: a per-column distance to the nearest site, then a
    per-row lower envelope of parabolas.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("empty drivable area")
    h, w = mask.shape
    big = h + w + 1
    # column pass: vertical distance to the nearest site, both directions
    g = np.full((h, w), big, dtype=np.int64)
    g[0] = np.where(mask[0], 0, big)
    for r in range(1, h):
        g[r] = np.where(mask[r], 0, g[r - 1] + 1)
    for r in range(h - 2, -1, -1):
        g[r] = np.minimum(g[r], g[r + 1] + 1)
    out = np.empty((h, w), dtype=np.int64)
    for r in range(h):
        row = [int(v) * int(v) if v < big else None for v in g[r]]
        out[r] = _lower_envelope_1d(row)
    return out


@dataclass
class DistanceField:
    """Distance in meters from each pixel center to the nearest drivable center."""

    values: np.ndarray
    resolution: float
    space: InteractionSpace

    @property
    def shape(self):
        return self.values.shape


def distance_field(raster: RasterMap) -> DistanceField:
    d2 = squared_edt(raster.drivable.astype(bool))
    return DistanceField(np.sqrt(d2.astype(float)) * raster.resolution, raster.resolution, raster.space)


def brute_force_distance(mask: np.ndarray, resolution: float = 1.0) -> np.ndarray:
    """O(P^2) reference: min over all set pixels, same final float ops as the EDT."""
    mask = np.asarray(mask, dtype=bool)
    rr, cc = np.nonzero(mask)
    if rr.size == 0:
        raise ValueError("empty drivable area")
    h, w = mask.shape
    R, C = np.mgrid[0:h, 0:w]
    d2 = np.full((h, w), np.iinfo(np.int64).max, dtype=np.int64)
    for r, c in zip(rr, cc):
        np.minimum(d2, (R - r) ** 2 + (C - c) ** 2, out=d2)
    return np.sqrt(d2.astype(float)) * resolution


def bilinear_weights(field: DistanceField, points):
    """Clamped bilinear lookup: value and analytic spatial gradient.

    Works on arrays of target-frame points (..., 2) and returns
    ``(value (...), grad (..., 2))``, gradient in meters/meter w.r.t. (x, y).
    """
    vals = field.values
    h, w = vals.shape
    res = field.resolution
    p = np.asarray(points, dtype=float)
    col = (p[..., 0] + field.space.lateral_extent) / res - 0.5
    row = (field.space.ahead_extent - p[..., 1]) / res - 0.5
    bad = ~(np.isfinite(col) & np.isfinite(row))
    col_c = np.where(bad, 0.0, np.clip(col, 0.0, w - 1))
    row_c = np.where(bad, 0.0, np.clip(row, 0.0, h - 1))
    c0 = np.minimum(np.floor(col_c).astype(int), max(w - 2, 0))
    r0 = np.minimum(np.floor(row_c).astype(int), max(h - 2, 0))
    c1 = np.minimum(c0 + 1, w - 1)
    r1 = np.minimum(r0 + 1, h - 1)
    fc = col_c - c0
    fr = row_c - r0
    v00, v01 = vals[r0, c0], vals[r0, c1]
    v10, v11 = vals[r1, c0], vals[r1, c1]
    top = v00 + fc * (v01 - v00)
    bot = v10 + fc * (v11 - v10)
    value = top + fr * (bot - top)
    dv_dcol = (1 - fr) * (v01 - v00) + fr * (v11 - v10)
    dv_drow = bot - top
    # clamped coordinates do not move the sample
    dv_dcol = np.where((col < 0) | (col > w - 1), 0.0, dv_dcol)
    dv_drow = np.where((row < 0) | (row > h - 1), 0.0, dv_drow)
    grad = np.stack([dv_dcol / res, -dv_drow / res], axis=-1)
    # non-finite points poison the result instead of indexing garbage
    value = np.where(bad, np.nan, value)
    grad = np.where(bad[..., None], np.nan, grad)
    return value, grad


def sample_distance(field: DistanceField, p) -> tuple[float, np.ndarray]:
    """Distance (m) at a single target-frame point plus its (d/dx, d/dy)."""
    value, grad = bilinear_weights(field, np.asarray(p, dtype=float).reshape(1, 2))
    return float(value[0]), grad[0]


def nearest_pixel(raster: RasterMap, points) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-pixel indices for target-frame points, clamped to the raster."""
    rc = raster.to_pixel(points)
    row = np.clip(np.floor(rc[..., 0] + 0.5).astype(int), 0, raster.height - 1)
    col = np.clip(np.floor(rc[..., 1] + 0.5).astype(int), 0, raster.width - 1)
    return row, col
