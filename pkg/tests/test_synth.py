import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mhajam.geometry import InteractionSpace
from mhajam.synth import (
    LAYOUTS,
    AgentHistory,
    DatasetFormatError,
    ScenarioSpec,
    derive_kinematics,
    filter_to_interaction_space,
    generate_dataset,
    generate_episode,
    read_dataset,
    write_dataset,
)


def hist(agent_id, pos):
    states = np.zeros((5, 5))
    states[:, 0], states[:, 1] = pos
    return AgentHistory(agent_id, "vehicle", states)


# -------------------------------------------------------------- kinematics

def test_stationary_kinematics():
    k = derive_kinematics(np.ones((5, 2)) * 3.0)
    assert not k[:, 2:].any()


def test_uniform_motion():
    k = derive_kinematics([(0, 0), (0, 1), (0, 2)], dt=0.5)
    np.testing.assert_allclose(k[:, 2], 2.0)
    np.testing.assert_allclose(k[:, 3], 0.0)
    np.testing.assert_allclose(k[:, 4], 0.0)


def test_circle_yaw_rate():
    t = np.arange(9) * 0.5
    omega = 0.5
    pts = np.column_stack([10 * np.cos(omega * t), 10 * np.sin(omega * t)])
    k = derive_kinematics(pts)
    # samples next to the ends see the one-sided end heading in their stencil
    np.testing.assert_allclose(np.abs(k[2:-2, 4]), omega, rtol=0.02)
    # the chord shortens the measured speed slightly
    np.testing.assert_allclose(k[1:-1, 2], 5.0, rtol=0.02)


def test_kinematics_needs_three_points():
    with pytest.raises(ValueError):
        derive_kinematics([(0, 0), (1, 1)])


def test_yaw_unwrapping_across_pi():
    # heading passes through +-pi while driving along -y and turning
    t = np.arange(7) * 0.5
    ang = math.pi - 0.1 + 0.1 * t
    pts = np.cumsum(np.column_stack([np.sin(ang), np.cos(ang)]), axis=0)
    k = derive_kinematics(pts)
    assert np.abs(k[:, 4]).max() < 1.0


@settings(max_examples=50, deadline=None)
@given(st.floats(1, 15), st.floats(-0.4, 0.4), st.floats(-math.pi, math.pi))
def test_kinematics_recovers_smooth_profile(v, w, psi):
    # fine-step integration of constant (v, yaw_rate), then sampled at 2 Hz
    dt = 0.5
    sub = 200
    x = y = 0.0
    pts = [(x, y)]
    h = psi
    for _ in range(8):
        for _ in range(sub):
            x += v * math.sin(h + 0.5 * w * dt / sub) * dt / sub
            y += v * math.cos(h + 0.5 * w * dt / sub) * dt / sub
            h += w * dt / sub
        pts.append((x, y))
    k = derive_kinematics(pts)
    inner = k[2:-2]
    assert np.abs(inner[:, 4] - w).max() <= 0.01 + 0.01 * abs(w)
    # the chord over 2 dt shortens speed by about v (w dt)^2 / 6
    assert np.abs(inner[:, 2] - v).max() <= 1.05 * v * (w * dt) ** 2 / 6 + 1e-6


# -------------------------------------------------------------- filtering

def test_filter_interaction_space():
    target = hist("t", (0, 0))
    kept = filter_to_interaction_space(target, [hist("a", (26, 0)), hist("b", (0, 39.9)), hist("c", (0, 40.0))])
    assert [h.agent_id for h in kept] == ["b", "c"]


def test_history_length_enforced():
    ep = generate_episode(ScenarioSpec(), 0)
    ep.target_history = AgentHistory("t", "vehicle", ep.target_history.states[1:])
    with pytest.raises(ValueError, match="history samples"):
        ep.validate(t_f=12, history_len=5)
    with pytest.raises(ValueError):
        AgentHistory("x", "bicycle", np.zeros((5, 5)))
    with pytest.raises(ValueError):
        AgentHistory("x", "vehicle", np.full((5, 5), np.nan))


# -------------------------------------------------------------- spec

def test_spec_validation():
    with pytest.raises(ValueError):
        ScenarioSpec(layout="roundabout")
    with pytest.raises(ValueError):
        ScenarioSpec(branch_probabilities={"left": 0.5, "right": 0.2, "straight": 0.2})
    with pytest.raises(ValueError):
        ScenarioSpec(layout="straight", branch_probabilities={"left": 1.0})
    assert ScenarioSpec().history_len == 5 and ScenarioSpec().future_len == 12


# -------------------------------------------------------------- generation

@pytest.mark.parametrize("layout", LAYOUTS)
def test_generation_deterministic(layout):
    spec = ScenarioSpec(layout=layout)
    assert generate_episode(spec, 1234) == generate_episode(spec, 1234)
    assert generate_episode(spec, 1234) != generate_episode(spec, 1235)


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(LAYOUTS), st.integers(0, 2**63 - 1))
def test_generated_episode_invariants(layout, seed):
    ep = generate_episode(ScenarioSpec(layout=layout), seed)
    space = InteractionSpace()
    assert len(ep.target_history) == 5
    assert ep.ground_truth_future.shape == (12, 2)
    for n in ep.neighbor_histories:
        assert len(n) == 5
        assert space.contains(n.position)
    assert np.isfinite(ep.target_history.states).all()
    # the target sits at the origin of its own frame, heading +y
    np.testing.assert_allclose(ep.target_history.states[-1, :2], 0.0, atol=1e-9)


def test_straight_constant_speed_matches_extrapolation():
    spec = ScenarioSpec(layout="straight", speed_range=(8.0, 8.0), noise=0.0, n_vehicles=(0, 0),
                        n_pedestrians=(0, 0), lead_probability=0.0, yield_probability=0.0)
    for seed in range(5):
        ep = generate_episode(spec, seed)
        v = ep.target_history.states[-1, 2]
        expected = np.column_stack([np.zeros(12), v * 0.5 * np.arange(1, 13)])
        assert np.abs(ep.ground_truth_future - expected).max() < 1e-9


def test_branch_frequencies():
    spec = ScenarioSpec(layout="four_way", n_vehicles=(0, 0), n_pedestrians=(0, 0))
    counts = {"left": 0, "straight": 0, "right": 0}
    for seed in range(3000):
        counts[generate_episode(spec, seed).branch] += 1
    for c in counts.values():
        assert abs(c / 3000 - 1 / 3) <= 0.03


def test_identical_history_divergent_futures():
    spec = ScenarioSpec(layout="four_way", noise=0.0, speed_range=(7.0, 7.0), n_vehicles=(0, 0),
                        n_pedestrians=(0, 0), approach_range=(10.0, 10.0),
                        lead_probability=0.0, yield_probability=0.0)
    eps = generate_dataset(spec, 40, seed=0)
    by_branch = {}
    for ep in eps:
        by_branch.setdefault(ep.branch, ep)
    assert len(by_branch) == 3
    hists = [e.target_history.states for e in by_branch.values()]
    for h in hists[1:]:
        np.testing.assert_allclose(h, hists[0], atol=1e-9)
    finals = [e.ground_truth_future[-1] for e in by_branch.values()]
    assert min(np.linalg.norm(a - b) for i, a in enumerate(finals) for b in finals[i + 1:]) > 5.0


# -------------------------------------------------------------- I/O

def test_dataset_round_trip(tmp_path):
    eps = generate_dataset(ScenarioSpec(layout="four_way"), 100, seed=5)
    eps += generate_dataset(ScenarioSpec(layout="curve"), 10, seed=6)
    path = tmp_path / "d.jsonl"
    write_dataset(path, eps)
    back = read_dataset(path)
    assert back == eps
    assert len(path.read_text().splitlines()) == len(eps) + 1


def test_empty_file_missing_header(tmp_path):
    path = tmp_path / "e.jsonl"
    path.write_text("")
    with pytest.raises(DatasetFormatError, match="missing header"):
        read_dataset(path)


def test_version_mismatch(tmp_path):
    path = tmp_path / "v.jsonl"
    path.write_text('{"format": "mhajam-episodes", "version": 99}\n')
    with pytest.raises(DatasetFormatError, match="version"):
        read_dataset(path)


def test_malformed_line_reports_line_number(tmp_path):
    path = tmp_path / "m.jsonl"
    write_dataset(path, generate_dataset(ScenarioSpec(), 2, seed=0))
    with open(path, "a") as f:
        f.write("{not json\n")
    with pytest.raises(DatasetFormatError, match="line 4"):
        read_dataset(path)
