import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from mhajam.geometry import (
    InteractionSpace,
    MapElement,
    Pose2,
    RasterMap,
    VectorScene,
    distance_field,
    from_target_frame,
    rasterize,
    sample_distance,
    to_target_frame,
    wrap_angle,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)
angle = st.floats(-20.0, 20.0, allow_nan=False)


def square(cx, cy, half, cls="drivable"):
    pts = [(cx - half, cy - half), (cx + half, cy - half), (cx + half, cy + half),
           (cx - half, cy + half), (cx - half, cy - half)]
    return MapElement(cls, pts)


def raster_from_mask(mask, res=1.0):
    h, w = mask.shape
    space = InteractionSpace(w * res / 2, h * res / 2, h * res / 2)
    data = np.zeros((4, h, w), dtype=np.uint8)
    data[0] = mask
    return RasterMap(data, res, space)


# -------------------------------------------------------------- frames

@given(angle)
def test_heading_is_wrapped(theta):
    h = Pose2(0, 0, theta).heading
    assert -math.pi < h <= math.pi
    assert math.isclose(math.cos(h), math.cos(theta), abs_tol=1e-9)
    assert math.isclose(math.sin(h), math.sin(theta), abs_tol=1e-9)


def test_wrap_angle_pi_stays_pi():
    assert wrap_angle(math.pi) == math.pi
    assert wrap_angle(-math.pi) == math.pi


@given(finite, finite, angle)
def test_target_maps_to_origin(x, y, h):
    np.testing.assert_allclose(to_target_frame([x, y], Pose2(x, y, h)), [0, 0], atol=1e-9)


def test_identity_orientation():
    np.testing.assert_allclose(to_target_frame([0, 5], Pose2(0, 0, 0)), [0, 5])


def test_rotated_target_hand_computed():
    # facing global +x; a point one meter along global +y lies to the left
    np.testing.assert_allclose(to_target_frame([2, 4], Pose2(2, 3, math.pi / 2)), [-1, 0], atol=1e-12)


@given(finite, finite, angle)
def test_one_meter_ahead_maps_to_unit_y(x, y, h):
    pose = Pose2(x, y, h)
    ahead = np.array([x, y]) + pose.forward
    np.testing.assert_allclose(to_target_frame(ahead, pose), [0, 1], atol=1e-9)
    right = np.array([x, y]) + pose.right
    np.testing.assert_allclose(to_target_frame(right, pose), [1, 0], atol=1e-9)


@given(finite, finite, angle, finite, finite)
def test_frame_round_trip(x, y, h, px, py):
    pose = Pose2(x, y, h)
    back = from_target_frame(to_target_frame([px, py], pose), pose)
    assert np.abs(back - [px, py]).max() < 1e-9


def test_interaction_space_validation():
    with pytest.raises(ValueError):
        InteractionSpace(0, 1, 1)
    s = InteractionSpace()
    assert s.length == 50 and s.width == 50
    assert s.contains([[0, 40.0], [25, -10]]).all()
    assert not s.contains([[25.01, 0]]).any()


# -------------------------------------------------------------- scene types

def test_polygon_must_be_closed():
    with pytest.raises(ValueError, match="closed"):
        MapElement("drivable", [(0, 0), (1, 0), (1, 1)])
    with pytest.raises(ValueError, match="distinct"):
        MapElement("drivable", [(0, 0), (1, 0), (0, 0)])
    with pytest.raises(ValueError):
        MapElement("river", [(0, 0), (1, 0), (1, 1), (0, 0)])


def test_scene_json_round_trip():
    scene = VectorScene([square(0, 0, 3), MapElement("lane_divider", [(0, -5), (0, 5)], 0.0)])
    assert VectorScene.from_json(scene.to_json()).elements == scene.elements
    assert json_keys(scene.to_json()) == {"elements"}


def json_keys(s):
    import json
    return set(json.loads(s))


# -------------------------------------------------------------- rasterize

def test_empty_scene_all_zero():
    r = rasterize(VectorScene([]), Pose2(0, 0, 0))
    assert r.data.shape == (4, 100, 100) and not r.data.any()


def test_full_cover_all_ones():
    r = rasterize(VectorScene([square(0, 15, 40)]), Pose2(0, 0, 0))
    assert r.drivable.all()
    assert not r.data[1:].any()


def test_square_matches_point_in_polygon():
    elem = square(0, 0, 5)
    r = rasterize(VectorScene([elem]), Pose2(0, 0, 0), resolution=0.5)
    assert r.drivable.sum() == 400
    rows, cols = np.nonzero(r.drivable)
    assert rows.max() - rows.min() == 19 and cols.max() - cols.min() == 19
    xs, ys = r.pixel_centers()
    poly = elem.points.tolist()
    for i in range(r.height):
        for j in range(r.width):
            assert r.drivable[i, j] == oracles.point_in_polygon(xs[i, j], ys[i, j], poly)


def test_row_zero_is_far_ahead():
    r = rasterize(VectorScene([square(0, 39.5, 0.6), square(0, -9.5, 0.6, "sidewalk")]),
                  Pose2(0, 0, 0), resolution=0.5)
    assert np.nonzero(r.drivable)[0].tolist() == [0, 0, 1, 1]
    assert np.nonzero(r.data[3])[0].max() == r.height - 1


def test_extent_invariants():
    r = rasterize(VectorScene([]), Pose2(0, 0, 0), resolution=1.0)
    assert r.width * r.resolution == r.space.width
    assert r.height * r.resolution == r.space.length
    assert set(np.unique(r.data)) <= {0, 1}


def test_degenerate_polygon_is_skipped():
    flat = MapElement("drivable", [(0, 0), (1, 1), (2, 2), (0, 0)])
    r = rasterize(VectorScene([flat, square(0, 0, 2)]), Pose2(0, 0, 0))
    assert len(r.skipped) == 1 and r.drivable.any()


def test_polyline_is_rasterized():
    r = rasterize(VectorScene([MapElement("lane_divider", [(0, -5), (0, 5)])]), Pose2(0, 0, 0))
    assert r.data[1].sum() >= 20


def test_pgm_dump():
    r = rasterize(VectorScene([square(0, 0, 5)]), Pose2(0, 0, 0), resolution=5.0)
    lines = r.to_pgm(0).splitlines()
    assert lines[:3] == ["P2", "10 10", "1"] and len(lines) == 13


def _scene(tx, ty):
    return VectorScene([square(tx + 3, ty + 4, 6), square(tx - 8, ty, 3, "crosswalk"),
                        MapElement("lane_divider", [(tx - 10, ty + 1), (tx + 10, ty + 7)])])


quarter = st.integers(-400, 400).map(lambda k: k / 4)


@settings(max_examples=100, deadline=None)
@given(quarter, quarter, st.floats(-3, 3), quarter, quarter)
def test_rasterize_translation_equivariant(tx, ty, h, ox, oy):
    # offsets on a quarter-meter grid translate every vertex exactly
    scene = _scene(tx, ty)
    a = rasterize(scene, Pose2(tx, ty, h), resolution=1.0)
    b = rasterize(scene.translated([ox, oy]), Pose2(tx + ox, ty + oy, h), resolution=1.0)
    assert np.array_equal(a.data, b.data)


@settings(max_examples=50, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(-3, 3), st.floats(-100, 100), st.floats(-100, 100))
def test_rasterize_translation_float_offsets(tx, ty, h, ox, oy):
    # arbitrary float offsets round the vertices; only pixels whose center sits on an edge may flip
    scene = _scene(tx, ty)
    a = rasterize(scene, Pose2(tx, ty, h), resolution=1.0)
    b = rasterize(scene.translated([ox, oy]), Pose2(tx + ox, ty + oy, h), resolution=1.0)
    assert (a.data != b.data).sum() <= 4


# -------------------------------------------------------------- distance field

def test_all_drivable_field_zero():
    assert not distance_field(raster_from_mask(np.ones((6, 6)))).values.any()


def test_single_pixel_corner():
    mask = np.zeros((5, 5))
    mask[2, 2] = 1
    f = distance_field(raster_from_mask(mask)).values
    assert f[0, 0] == pytest.approx(2 * math.sqrt(2))
    assert f[2, 2] == 0.0


def test_empty_drivable_raises():
    with pytest.raises(ValueError, match="empty drivable area"):
        distance_field(raster_from_mask(np.zeros((4, 4))))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 24), st.integers(1, 24), st.integers(0, 2**31 - 1), st.sampled_from([0.5, 1.0, 2.0]))
def test_field_matches_brute_force(h, w, seed, res):
    rng = np.random.default_rng(seed)
    mask = rng.random((h, w)) < 0.15
    mask[rng.integers(h), rng.integers(w)] = True
    f = distance_field(raster_from_mask(mask, res)).values
    assert np.array_equal(f, oracles.edt_brute(mask, res))
    assert (f[mask] == 0).all()
    # 1-Lipschitz in the grid metric
    if h > 1:
        assert (np.abs(np.diff(f, axis=0)) <= res * math.sqrt(2) + 1e-12).all()
    if w > 1:
        assert (np.abs(np.diff(f, axis=1)) <= res * math.sqrt(2) + 1e-12).all()


# -------------------------------------------------------------- sampling

def test_sample_at_drivable_center_is_zero():
    rng = np.random.default_rng(3)
    mask = rng.random((12, 12)) < 0.3
    r = raster_from_mask(mask, 0.5)
    f = distance_field(r)
    xs, ys = r.pixel_centers()
    for i, j in zip(*np.nonzero(mask)):
        assert sample_distance(f, (xs[i, j], ys[i, j]))[0] == 0.0


def test_sample_midpoint():
    mask = np.zeros((1, 2))
    mask[0, 0] = 1
    r = raster_from_mask(mask, 1.0)
    f = distance_field(r)
    xs, ys = r.pixel_centers()
    mid = ((xs[0, 0] + xs[0, 1]) / 2, ys[0, 0])
    assert sample_distance(f, mid)[0] == pytest.approx(0.5)


def test_sample_outside_clamps():
    mask = np.zeros((4, 4))
    mask[0, 0] = 1
    f = distance_field(raster_from_mask(mask))
    val, grad = sample_distance(f, (1e4, -1e4))
    assert math.isfinite(val) and val == pytest.approx(f.values[-1, -1])
    assert np.array_equal(grad, [0.0, 0.0])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_sample_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    mask = rng.random((10, 10)) < 0.2
    mask[5, 5] = True
    r = raster_from_mask(mask, 1.0)
    f = distance_field(r)
    p = rng.uniform(-4.4, 4.4, 2)
    frac = (p + 5) % 1.0       # keep away from the bilinear creases at pixel centers
    if np.any(np.abs(frac - 0.5) < 0.05):
        return
    _, g = sample_distance(f, p)
    eps = 1e-6
    fd = [(sample_distance(f, p + e)[0] - sample_distance(f, p - e)[0]) / (2 * eps)
          for e in (np.array([eps, 0]), np.array([0, eps]))]
    err = np.abs(g - fd) / np.maximum(1e-8, np.abs(g) + np.abs(fd))
    assert err.max() < 1e-6


def test_sample_non_finite_point_is_nan():
    mask = np.zeros((4, 4))
    mask[0, 0] = 1
    f = distance_field(raster_from_mask(mask))
    val, grad = sample_distance(f, (np.nan, 0.0))
    assert math.isnan(val) and np.isnan(grad).all()
