"""Displacement, miss and off-road metrics over sets of multimodal predictions.

Averages are accumulated sequentially (``np.cumsum``) so results are
bit-stable and reproducible by a plain Python loop.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import RasterMap, nearest_pixel
from .model import PredictionSet

DEFAULT_KS = (1, 5, 10, 15)
DEFAULT_DS = (2.0,)
OFFROAD_RULES = ("any", "final")


def point_prediction(traj, probs=None) -> PredictionSet:
    """Wrap point trajectories (T, 2) or (L, T, 2) as a PredictionSet with unit sigmas."""
    mu = np.asarray(traj, dtype=float)
    if mu.ndim == 2:
        mu = mu[None]
    L = mu.shape[0]
    p = np.full(L, 1.0 / L) if probs is None else np.asarray(probs, dtype=float)
    return PredictionSet(mu, np.ones_like(mu), np.zeros(mu.shape[:2]), p)


def top_k_modes(probs, k: int) -> np.ndarray:
    """Indices of the k most probable modes; ties go to the lower index."""
    probs = np.asarray(probs, dtype=float)
    if not 1 <= k <= len(probs):
        raise ValueError(f"k={k} out of range 1..{len(probs)}")
    return np.argsort(-probs, kind="stable")[:k]


def _distances(pred: PredictionSet, gt, k: int) -> np.ndarray:
    gt = np.asarray(gt, dtype=float)
    if gt.shape != pred.mu.shape[1:]:
        raise ValueError(f"ground truth shape {gt.shape} does not match prediction {pred.mu.shape[1:]}")
    sel = pred.mu[top_k_modes(pred.probs, k)]
    dx = sel[..., 0] - gt[:, 0]
    dy = sel[..., 1] - gt[:, 1]
    return np.sqrt(dx * dx + dy * dy)           # (k, T)


def min_ade_k(pred: PredictionSet, gt, k: int) -> float:
    d = _distances(pred, gt, k)
    return float(np.min(np.cumsum(d, axis=1)[:, -1] / d.shape[1]))


def min_fde_k(pred: PredictionSet, gt, k: int) -> float:
    return float(np.min(_distances(pred, gt, k)[:, -1]))


def is_miss(pred: PredictionSet, gt, k: int, d: float = 2.0) -> bool:
    """True when every top-k mode strays at least ``d`` meters from gt at some step."""
    if d <= 0:
        raise ValueError("miss threshold d must be > 0")
    return bool(np.min(np.max(_distances(pred, gt, k), axis=1)) >= d)


def miss_rate(preds, gts, k: int, d: float = 2.0) -> float:
    preds, gts = list(preds), list(gts)
    _check_lengths(preds, gts)
    misses = sum(is_miss(p, g, k, d) for p, g in zip(preds, gts))
    return misses / len(preds)


def trajectory_offroad(traj, raster: RasterMap, rule: str = "any") -> bool:
    """Whether a point trajectory touches a non-drivable pixel (nearest-pixel lookup)."""
    if rule not in OFFROAD_RULES:
        raise ValueError(f"unknown off-road rule {rule!r}")
    pts = np.asarray(traj, dtype=float)
    if rule == "final":
        pts = pts[-1:]
    r, c = nearest_pixel(raster, pts)
    return bool(np.any(raster.data[0, r, c] == 0))


def offroad_count(pred: PredictionSet, raster: RasterMap, k: int, rule: str = "any") -> int:
    return sum(trajectory_offroad(pred.mu[m], raster, rule) for m in top_k_modes(pred.probs, k))


def offroad_rate(preds, rasters, k: int | None = None, rule: str = "any") -> float:
    """Fraction of top-k trajectories that leave the drivable area (k=None: all modes)."""
    preds, rasters = list(preds), list(rasters)
    _check_lengths(preds, rasters)
    total = 0
    count = 0
    for p, r in zip(preds, rasters):
        kk = p.n_modes if k is None else k
        count += offroad_count(p, r, kk, rule)
        total += kk
    return count / total


def _check_lengths(a, b):
    if len(a) != len(b):
        raise ValueError(f"{len(a)} predictions but {len(b)} references")
    if not a:
        raise ValueError("no episodes to evaluate")


def _seq_mean(values) -> float:
    arr = np.asarray(values, dtype=float)
    return float(np.cumsum(arr)[-1] / len(arr))


def _dkey(d: float) -> str:
    return f"{d:g}"


@dataclass
class MetricsReport:
    minade: dict = field(default_factory=dict)      # "k" -> m
    minfde: dict = field(default_factory=dict)      # "k" -> m
    missrate: dict = field(default_factory=dict)    # "k,d" -> fraction
    offroad_rate: float | None = None
    n_episodes: int = 0

    def to_dict(self) -> dict:
        return {"minade": dict(self.minade), "minfde": dict(self.minfde),
                "missrate": dict(self.missrate), "offroad_rate": self.offroad_rate,
                "n_episodes": self.n_episodes}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(dict(d["minade"]), dict(d["minfde"]), dict(d["missrate"]),
                   None if d["offroad_rate"] is None else float(d["offroad_rate"]),
                   int(d["n_episodes"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def ade(self, k: int) -> float:
        return self.minade[str(k)]

    def fde(self, k: int) -> float:
        return self.minfde[str(k)]

    def miss(self, k: int, d: float = 2.0) -> float:
        return self.missrate[f"{k},{_dkey(d)}"]


def evaluate(preds, gts, rasters=None, ks=DEFAULT_KS, ds=DEFAULT_DS, offroad_k=None,
             offroad_rule: str = "any") -> MetricsReport:
    """Full metric table. A requested k above a prediction's mode count uses all its modes."""
    preds, gts = list(preds), list(gts)
    _check_lengths(preds, gts)
    ks = sorted({int(k) for k in ks})
    if not ks or ks[0] < 1:
        raise ValueError("ks must be positive integers")
    rep = MetricsReport(n_episodes=len(preds))
    for k in ks:
        ade, fde = [], []
        for p, g in zip(preds, gts):
            kk = min(k, p.n_modes)
            ade.append(min_ade_k(p, g, kk))
            fde.append(min_fde_k(p, g, kk))
        rep.minade[str(k)] = _seq_mean(ade)
        rep.minfde[str(k)] = _seq_mean(fde)
        for d in ds:
            misses = sum(is_miss(p, g, min(k, p.n_modes), d) for p, g in zip(preds, gts))
            rep.missrate[f"{k},{_dkey(d)}"] = misses / len(preds)
    if rasters is not None:
        rasters = list(rasters)
        _check_lengths(preds, rasters)
        if offroad_k is None:
            rep.offroad_rate = offroad_rate(preds, rasters, None, offroad_rule)
        else:
            total = count = 0
            for p, r in zip(preds, rasters):
                kk = min(offroad_k, p.n_modes)
                count += offroad_count(p, r, kk, offroad_rule)
                total += kk
            rep.offroad_rate = count / total
    return rep
