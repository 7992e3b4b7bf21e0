"""Closed-form kinematic extrapolation baselines.

All models start from an :class:`AgentState` in the target frame with a
compass heading (0 = +y) and integrate

    d/dt (x, y) = v(t) * (sin psi(t), cos psi(t)),
    psi(t) = psi0 + yaw_rate * t,  v(t) = max(v0 + a t, 0) when decelerating,

exactly at the 0.5 s sample times.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .synth import DT, AgentState

MODEL_NAMES = ("cv_yaw", "cv_yaw_rate", "ca_yaw", "ca_yaw_rate")


def sample_times(future_len: int = 12, dt: float = DT) -> np.ndarray:
    return dt * np.arange(1, future_len + 1)


def _series_moments(w, t):
    # I0 = int_0^t e^{-i w s} ds, I1 = int_0^t s e^{-i w s} ds via the Taylor series
    z = -1j * w * t
    i0 = np.zeros_like(z)
    i1 = np.zeros_like(z)
    term = np.ones_like(z)
    for n in range(30):
        i0 = i0 + term / (n + 1)
        i1 = i1 + term / (n + 2)
        term = term * z / (n + 1)
    return t * i0, t * t * i1


def _moments(w: float, t: np.ndarray):
    t = np.asarray(t, dtype=float)
    if abs(w) * float(np.max(t, initial=0.0)) < 1.0:
        return _series_moments(w, t.astype(complex))
    e = np.exp(-1j * w * t)
    i0 = (1 - e) / (1j * w)
    i1 = (1j / w) * (t * e - i0)
    return i0, i1


def integrate(state: AgentState, times, heading: float = 0.0, accel: bool = True,
              turn: bool = True) -> np.ndarray:
    """Positions (len(times), 2) under constant (or zero) acceleration and yaw rate."""
    times = np.asarray(times, dtype=float)
    v = float(state.v)
    a = float(state.a) if accel else 0.0
    w = float(state.yaw_rate) if turn else 0.0
    t_eff = times
    if a < 0:
        t_stop = max(v, 0.0) / -a
        t_eff = np.minimum(times, t_stop)
    i0, i1 = _moments(w, t_eff)
    # forward direction sin(psi) + i cos(psi) == i * exp(-i psi)
    p = 1j * np.exp(-1j * heading) * (v * i0 + a * i1)
    return np.stack([state.x + p.real, state.y + p.imag], axis=-1)


def const_vel_yaw(state: AgentState, future_len: int = 12, heading: float = 0.0) -> np.ndarray:
    """Straight-line extrapolation along ``heading`` at the current speed."""
    return integrate(state, sample_times(future_len), heading, accel=False, turn=False)


def physics_models(state: AgentState, future_len: int = 12, heading: float = 0.0) -> dict:
    """The four constant-kinematics extrapolations, keyed by :data:`MODEL_NAMES`."""
    t = sample_times(future_len)
    return {
        "cv_yaw": integrate(state, t, heading, accel=False, turn=False),
        "cv_yaw_rate": integrate(state, t, heading, accel=False, turn=True),
        "ca_yaw": integrate(state, t, heading, accel=True, turn=False),
        "ca_yaw_rate": integrate(state, t, heading, accel=True, turn=True),
    }


def ade(traj, gt) -> float:
    d = np.sqrt(np.sum((np.asarray(traj) - np.asarray(gt)) ** 2, axis=-1))
    return float(np.cumsum(d)[-1] / len(d))


@dataclass
class OracleChoice:
    name: str
    trajectory: np.ndarray
    ade: float


def physics_oracle(state: AgentState, gt, heading: float = 0.0) -> OracleChoice:
    """The physics model with the lowest ADE against ``gt`` (first in :data:`MODEL_NAMES` on ties)."""
    gt = np.asarray(gt, dtype=float)
    models = physics_models(state, len(gt), heading)
    best = None
    for name in MODEL_NAMES:
        e = ade(models[name], gt)
        if best is None or e < best.ade:
            best = OracleChoice(name, models[name], e)
    return best
