"""Finite-difference gradient checks for every primitive and the end-to-end loss."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import RasterMap, distance_field
from .losses import LossConfig, batch_loss, field_distance_op, gaussian_nll_op
from .model import ModelConfig, forward, init_params, make_batch
from .neural import ParamStore, grad_check
from .neural import ops
from .synth import ScenarioSpec, generate_episode

DEFAULT_TOL = 1e-4


def _weighted(out, w):
    return ops.sum(ops.mul(out, w))


def primitive_cases(seed: int = 0) -> dict:
    """name -> (scalar function, list of float64 input arrays)."""
    rng = np.random.default_rng(seed)

    def r(*shape):
        return rng.normal(size=shape)

    def pos(*shape):
        return rng.uniform(0.5, 2.0, size=shape)

    w23, w34 = r(2, 3), r(3, 4)
    wconv = r(2, 3, 3, 3)
    cases = {
        "add": (lambda a, b: _weighted(ops.add(a, b), w23), [r(2, 3), r(3)]),
        "sub": (lambda a, b: _weighted(ops.sub(a, b), w23), [r(2, 3), r(2, 1)]),
        "mul": (lambda a, b: _weighted(ops.mul(a, b), w23), [r(2, 3), r(2, 3)]),
        "scale": (lambda a: _weighted(ops.scale(a, -2.5), w23), [r(2, 3)]),
        "tanh": (lambda a: _weighted(ops.tanh(a), w23), [r(2, 3)]),
        "sigmoid": (lambda a: _weighted(ops.sigmoid(a), w23), [r(2, 3)]),
        "exp": (lambda a: _weighted(ops.exp(a), w23), [r(2, 3)]),
        "log": (lambda a: _weighted(ops.log(a), w23), [pos(2, 3)]),
        "softplus": (lambda a: _weighted(ops.softplus(a), w23), [r(2, 3)]),
        "square": (lambda a: _weighted(ops.square(a), w23), [r(2, 3)]),
        "clip": (lambda a: _weighted(ops.clip(a, -10.0, 10.0), w23), [r(2, 3)]),
        "sum": (lambda a, _w=r(3): _weighted(ops.sum(a, axis=0), _w), [r(2, 3)]),
        "mean": (lambda a: ops.mean(ops.square(a)), [r(2, 3)]),
        "reshape": (lambda a: _weighted(ops.reshape(a, (3, 2)), w23.reshape(3, 2)), [r(2, 3)]),
        "flatten": (lambda a, _w=r(2, 6): _weighted(ops.flatten(a), _w), [r(2, 3, 2)]),
        "transpose": (lambda a: _weighted(ops.transpose(a, (1, 0)), w23.T), [r(2, 3)]),
        "getitem": (lambda a, _w=r(3): _weighted(a[[0, 1, 1], [2, 0, 0]], _w), [r(2, 3)]),
        "broadcast_to": (lambda a: _weighted(ops.broadcast_to(a, (2, 3)), w23), [r(1, 3)]),
        "concat": (lambda a, b, _w=r(2, 5): _weighted(ops.concat([a, b], axis=1), _w), [r(2, 3), r(2, 2)]),
        "stack": (lambda a, b, _w=r(2, 2, 3): _weighted(ops.stack([a, b], axis=1), _w), [r(2, 3), r(2, 3)]),
        "matmul": (lambda a, b, _w=r(2, 2, 4): _weighted(ops.matmul(a, b), _w), [r(2, 2, 3), r(3, 4)]),
        "linear": (lambda x, w, b, _w=r(2, 4): _weighted(ops.linear(x, w, b), _w), [r(2, 3), r(3, 4), r(4)]),
        "conv1x1": (lambda x, w, b, _w=r(2, 2, 4): _weighted(ops.conv1x1(x, w, b), _w), [r(2, 2, 3), r(3, 4), r(4)]),
        "softmax": (lambda a: _weighted(ops.softmax(a), w34), [r(3, 4)]),
        "log_softmax": (lambda a: _weighted(ops.log_softmax(a), w34), [r(3, 4)]),
        "conv2d_same": (lambda x, w, b, _w=r(1, 2, 3, 3): _weighted(
            ops.conv2d(x, w, b, stride=2, padding="same"), _w), [r(1, 3, 5, 5), wconv, r(2)]),
        "conv2d_valid": (lambda x, w, b, _w=r(1, 2, 3, 3): _weighted(
            ops.conv2d(x, w, b, stride=1, padding="valid"), _w), [r(1, 3, 5, 5), wconv, r(2)]),
        "lstm_cell_step": (
            lambda x, h, c, wi, wh, b: _lstm_scalar(ops.lstm_cell_step(x, h, c, wi, wh, b)),
            [r(2, 3), r(2, 4), r(2, 4), r(3, 16) * 0.5, r(4, 16) * 0.5, r(16) * 0.5]),
        "lstm_cell_step_projected": (
            lambda g, h, c, wh: _lstm_scalar(ops.lstm_cell_step_projected(g, h, c, wh)),
            [r(2, 16), r(2, 4), r(2, 4), r(4, 16) * 0.5]),
        "scatter_rows_to_grid": (
            lambda a, _w=r(5, 3): _weighted(ops.scatter_rows_to_grid(a, [3, 0], 5), _w), [r(2, 3)]),
        "gaussian_nll": (lambda p, m, s, rho: ops.sum(gaussian_nll_op(p, m, s, rho)),
                         [r(3, 2), r(3, 2), pos(3, 2), rng.uniform(-0.8, 0.8, 3)]),
        "field_distance": (lambda p: ops.sum(field_distance_op(p, [_toy_field()])),
                           [np.array([[[2.1, 3.3], [-4.2, 7.7], [6.6, -1.4]]])]),
    }
    return cases


def _lstm_scalar(hc):
    # d/dc of this reduction is strictly positive, so no gate gradient cancels to ~0
    h, c = hc
    return ops.add(ops.sum(ops.exp(h)), ops.sum(ops.exp(c)))


def _toy_field():
    """Distance field of a drivable patch in the far-left corner of the default space."""
    from .geometry import InteractionSpace
    space = InteractionSpace()
    data = np.zeros((4, 10, 10), dtype=np.uint8)
    data[0, :2, :2] = 1
    return distance_field(RasterMap(data, 5.0, space))


@dataclass
class CheckReport:
    errors: dict = field(default_factory=dict)   # check name -> max relative error
    tol: float = DEFAULT_TOL

    @property
    def failures(self) -> list[str]:
        return [k for k, e in self.errors.items() if not e < self.tol]

    @property
    def ok(self) -> bool:
        return not self.failures


def end_to_end_case(cfg: ModelConfig | None = None, seed: int = 0, loss_cfg: LossConfig | None = None):
    """(f, name -> array) for the total loss over every parameter of a 64-bit tiny model.

    Agents are slow so the loss stays small and central differences are not
    swamped by roundoff. The distance fields are replaced by one whose
    drivable band lies a few meters right of the predicted means, so the
    off-road term contributes gradient.
    """
    cfg = cfg or ModelConfig.tiny()
    loss_cfg = loss_cfg or LossConfig()
    spec = ScenarioSpec(layout="four_way", t_f=cfg.future_len * 0.5, speed_range=(0.5, 1.0))
    episodes = [generate_episode(spec, seed + i, cfg.space) for i in range(2)]
    batch = make_batch(episodes, cfg)
    data = np.zeros((4,) + cfg.raster_shape, dtype=np.uint8)
    band = int(np.ceil(cfg.raster_shape[1] * 0.6))
    data[0, :, band:] = 1
    fld = distance_field(RasterMap(data, cfg.resolution, cfg.space))
    batch.fields = [fld] * batch.n_episodes
    params = init_params(cfg, seed, dtype=np.float64)
    names = params.names()

    def f(*tensors):
        store = ParamStore(np.float64)
        for n, t in zip(names, tensors):
            store._params[n] = t
        out = forward(batch, store, cfg)
        return batch_loss(out, batch.futures, batch.fields, loss_cfg).total

    return f, {n: params[n].data for n in names}


def run_grad_checks(tol: float = DEFAULT_TOL, seed: int = 0, end_to_end: bool = True,
                    cfg: ModelConfig | None = None) -> CheckReport:
    """Check every primitive and, optionally, the full loss per parameter tensor."""
    report = CheckReport(tol=tol)
    for name, (f, inputs) in primitive_cases(seed).items():
        res = grad_check(f, inputs)
        report.errors[f"op.{name}"] = res.max_error
    if end_to_end:
        f, inputs = end_to_end_case(cfg, seed)
        res = grad_check(f, inputs)
        for pname, err in res.errors.items():
            report.errors[f"param.{pname}"] = err
    return report
