"""Best-of-L Gaussian NLL, mode cross-entropy and off-road losses."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import DistanceField, bilinear_weights
from .model import ModelOutput, PredictionSet
from .neural import Tensor
from .neural import ops
from .neural.tensor import _acc, _make, as_tensor

LOG_2PI = math.log(2 * math.pi)


@dataclass(frozen=True)
class LossConfig:
    lambda_cl: float = 1.0
    lambda_or: float = 0.5
    offroad_reduction: str = "sum"    # per episode, like the regression term

    def __post_init__(self):
        if self.lambda_cl < 0 or self.lambda_or < 0:
            raise ValueError("LossConfig weights must be >= 0")
        if self.offroad_reduction not in ("mean", "sum"):
            raise ValueError("LossConfig.offroad_reduction must be 'mean' or 'sum'")


@dataclass
class LossBreakdown:
    reg: float
    cl: float
    offroad: float
    total: float
    best_mode: int   # 1-based

    def to_dict(self) -> dict:
        return {"reg": self.reg, "cl": self.cl, "offroad": self.offroad,
                "total": self.total, "best_mode": self.best_mode}


# ------------------------------------------------------------------ primitives

def nll_terms(point, mu, sigma, rho):
    """Elementwise bivariate-normal NLL; arrays broadcast over leading axes."""
    u = (point[..., 0] - mu[..., 0]) / sigma[..., 0]
    w = (point[..., 1] - mu[..., 1]) / sigma[..., 1]
    D = 1.0 - rho * rho
    Q = u * u + w * w - 2 * rho * u * w
    nll = LOG_2PI + np.log(sigma[..., 0]) + np.log(sigma[..., 1]) + 0.5 * np.log(D) + Q / (2 * D)
    return nll, u, w, D, Q


def gaussian_nll_op(point, mu: Tensor, sigma: Tensor, rho: Tensor) -> Tensor:
    """Differentiable NLL of ``point`` (..., 2) under N(mu, sigma, rho); shape (...)."""
    point, mu, sigma, rho = as_tensor(point), as_tensor(mu), as_tensor(sigma), as_tensor(rho)
    nll, u, w, D, Q = nll_terms(point.data, mu.data, sigma.data, rho.data)
    r = rho.data

    def bw(o):
        g = o.grad
        du = (u - r * w) / D
        dw = (w - r * u) / D
        sx, sy = sigma.data[..., 0], sigma.data[..., 1]
        dmu = np.stack([-du / sx, -dw / sy], axis=-1)
        if mu.requires_grad:
            _acc(mu, _sum_to(g[..., None] * dmu, mu.shape))
        if point.requires_grad:
            _acc(point, _sum_to(-g[..., None] * dmu, point.shape))
        if sigma.requires_grad:
            ds = np.stack([(1 - u * du) / sx, (1 - w * dw) / sy], axis=-1)
            _acc(sigma, _sum_to(g[..., None] * ds, sigma.shape))
        if rho.requires_grad:
            drho = -r / D - u * w / D + r * Q / (D * D)
            _acc(rho, _sum_to(g * drho, rho.shape))

    return _make(nll, (point, mu, sigma, rho), bw)


def _sum_to(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def field_distance_op(points: Tensor, fields: list[DistanceField]) -> Tensor:
    """Bilinear distance-field samples for points (B, ..., 2), one field per leading index."""
    points = as_tensor(points)
    vals = np.empty(points.shape[:-1], dtype=points.dtype)
    grads = np.empty(points.shape, dtype=points.dtype)
    for b, f in enumerate(fields):
        v, g = bilinear_weights(f, points.data[b].astype(float))
        vals[b] = v
        grads[b] = g

    def bw(o):
        if points.requires_grad:
            _acc(points, o.grad[..., None] * grads)

    return _make(vals, (points,), bw)


# --------------------------------------------------------------- single-episode

def _check_gaussian(sx, sy, rho):
    if not (np.all(np.asarray(sx) > 0) and np.all(np.asarray(sy) > 0)
            and np.all(np.abs(np.asarray(rho)) < 1)):
        raise ValueError("invalid Gaussian: need sigma > 0 and |rho| < 1")


def gaussian_nll(point, g) -> float:
    """-log N(point; g) for ``g = (mu_x, mu_y, sigma_x, sigma_y, rho)``."""
    mx, my, sx, sy, r = map(float, g)
    _check_gaussian(sx, sy, r)
    nll, *_ = nll_terms(np.asarray(point, dtype=float), np.array([mx, my]),
                        np.array([sx, sy]), np.float64(r))
    return float(nll)


def mode_nll(pred: PredictionSet, gt) -> np.ndarray:
    """Summed-over-time NLL per mode, shape (L,)."""
    gt = np.asarray(gt, dtype=float)
    if gt.shape != pred.mu.shape[1:]:
        raise ValueError(f"ground truth shape {gt.shape} does not match prediction {pred.mu.shape[1:]}")
    _check_gaussian(pred.sigma[..., 0], pred.sigma[..., 1], pred.rho)
    nll, *_ = nll_terms(gt[None], pred.mu, pred.sigma, pred.rho)
    return nll.sum(axis=1)


def regression_loss(pred: PredictionSet, gt) -> tuple[float, int]:
    """Minimum over modes of the summed NLL and its (1-based) argmin; ties go to the lower index."""
    per_mode = mode_nll(pred, gt)
    best = int(np.argmin(per_mode))
    return float(per_mode[best]), best + 1


def classification_loss(probs, best_mode: int) -> float:
    """-log P of the best mode (1-based index)."""
    p = np.asarray(probs, dtype=float)
    if not 1 <= best_mode <= len(p):
        raise ValueError(f"best_mode {best_mode} out of range 1..{len(p)}")
    return float(-np.log(p[best_mode - 1]))


def offroad_loss(pred: PredictionSet, field: DistanceField, reduction: str = "sum") -> float:
    d, _ = bilinear_weights(field, pred.mu)
    return float(d.mean() if reduction == "mean" else d.sum())


def total_loss(pred: PredictionSet, gt, field: DistanceField, cfg: LossConfig | None = None) -> LossBreakdown:
    cfg = cfg or LossConfig()
    reg, best = regression_loss(pred, gt)
    cl = classification_loss(pred.probs, best)
    off = offroad_loss(pred, field, cfg.offroad_reduction)
    return compose(reg, cl, off, best, cfg)


def compose(reg: float, cl: float, off: float, best: int, cfg: LossConfig) -> LossBreakdown:
    total = reg + cfg.lambda_cl * cl + cfg.lambda_or * off
    return LossBreakdown(float(reg), float(cl), float(off), float(total), int(best))


# ---------------------------------------------------------------------- batched

@dataclass
class BatchLoss:
    total: Tensor
    reg: Tensor
    cl: Tensor
    offroad: Tensor
    best_mode: np.ndarray   # (B,) 1-based

    def breakdown(self) -> dict:
        return {"reg": float(self.reg.data), "cl": float(self.cl.data),
                "offroad": float(self.offroad.data), "total": float(self.total.data)}


def batch_loss(out: ModelOutput, futures, fields, cfg: LossConfig,
               unit_covariance: bool = False) -> BatchLoss:
    """Differentiable total loss averaged over the batch's episodes.

    ``unit_covariance`` scores every mode with sigma = 1, rho = 0 instead of the
    predicted covariance (used for warm-up; sigma and rho then get no gradient).
    """
    B, L, T, _ = out.mu.shape
    gt = Tensor(np.asarray(futures, dtype=out.mu.dtype)[:, None])      # (B, 1, T, 2)
    sigma, rho = out.sigma, out.rho
    if unit_covariance:
        sigma = Tensor(np.ones(sigma.shape, dtype=sigma.dtype))
        rho = Tensor(np.zeros(rho.shape, dtype=rho.dtype))
    nll = ops.sum(gaussian_nll_op(gt, out.mu, sigma, rho), axis=2)   # (B, L)
    best = np.argmin(nll.data, axis=1)
    rows = np.arange(B)
    reg = ops.mean(nll[rows, best])
    cl = ops.mean(ops.scale(out.log_probs[rows, best], -1.0))
    total = ops.add(reg, ops.scale(cl, cfg.lambda_cl))
    if fields is not None:
        dist = field_distance_op(out.mu, fields)                        # (B, L, T)
        if cfg.offroad_reduction == "mean":
            off = ops.mean(dist)
        else:
            off = ops.scale(ops.sum(dist), 1.0 / B)
        if cfg.lambda_or > 0:
            total = ops.add(total, ops.scale(off, cfg.lambda_or))
    else:
        off = Tensor(np.zeros((), dtype=out.mu.dtype))
    return BatchLoss(total, reg, cl, off, best + 1)
