"""scikit-learn style estimators over lists of episodes.

``X`` is a sequence of :class:`~mhajam.synth.Episode` (or episodes already
converted with :func:`~mhajam.model.prepare_episode`); ``y`` is optional and
defaults to each episode's ground-truth future.
"""

from __future__ import annotations

import io
import json
from collections.abc import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .baselines import const_vel_yaw, physics_oracle
from .losses import LossConfig
from .metrics import evaluate, point_prediction
from .model import ModelConfig, PredictionSet, PreparedEpisode, prepare_episode
from .synth import AgentState, Episode
from .training import TrainConfig, predict_prepared, train

PRESETS = {"desk": ModelConfig, "compact": ModelConfig.compact, "tiny": ModelConfig.tiny}


# ------------------------------------------------------------------ validation

def check_episodes(X, require_future: bool = False) -> list:
    """Validate a non-empty sequence of episodes (or prepared episodes)."""
    if isinstance(X, (Episode, PreparedEpisode)):
        raise TypeError("X must be a sequence of episodes, not a single episode")
    if not isinstance(X, Sequence) and not hasattr(X, "__iter__"):
        raise TypeError(f"X must be a sequence of episodes, got {type(X).__name__}")
    X = list(X)
    if not X:
        raise ValueError("X contains no episodes")
    for i, ep in enumerate(X):
        if not isinstance(ep, (Episode, PreparedEpisode)):
            raise TypeError(f"X[{i}] is {type(ep).__name__}, expected Episode")
        if require_future and _future(ep) is None:
            raise ValueError(f"X[{i}] has no ground-truth future")
    return X


def check_futures(y, n: int, future_len: int | None = None) -> np.ndarray:
    """Validate ground-truth futures as a finite (n, T, 2) array."""
    arr = np.asarray(y, dtype=float)
    if arr.ndim != 3 or arr.shape[0] != n or arr.shape[2] != 2:
        raise ValueError(f"y must have shape ({n}, T, 2), got {arr.shape}")
    if future_len is not None and arr.shape[1] != future_len:
        raise ValueError(f"y horizon {arr.shape[1]} != model future_len {future_len}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("y contains non-finite values")
    return arr


def _future(ep):
    return ep.ground_truth_future if isinstance(ep, Episode) else ep.future


def _futures(X, y):
    if y is None:
        missing = [i for i, ep in enumerate(X) if _future(ep) is None]
        if missing:
            raise ValueError(f"no y given and X[{missing[0]}] has no ground-truth future")
        return np.stack([np.asarray(_future(ep), dtype=float) for ep in X])
    return check_futures(y, len(X))


def _target_state(ep) -> AgentState:
    states = ep.target_history.states if isinstance(ep, Episode) else ep.target_states
    return AgentState(*states[-1])


def _raster(ep, cfg: ModelConfig):
    from .geometry import RasterMap, rasterize
    if isinstance(ep, Episode):
        return rasterize(ep.scene, ep.target_pose, cfg.space, cfg.resolution)
    return RasterMap(ep.raster, cfg.resolution, cfg.space)


# ------------------------------------------------------------------ estimators

class MHAJAMPredictor(BaseEstimator):
    """Multi-head joint agent-map attention trajectory predictor.

    Parameters mirror :class:`ModelConfig`, :class:`LossConfig` and
    :class:`TrainConfig`; ``preset`` picks the base model size and
    ``model_overrides`` patches any other ModelConfig field.
    """

    def __init__(self, n_modes=16, variant="JAM", preset="desk", model_overrides=None,
                 lambda_cl=1.0, lambda_or=0.5, epochs=20, warmup_epochs=15, batch_size=32,
                 lr=3e-3, lr_schedule="cosine", random_state=0):
        self.n_modes = n_modes
        self.variant = variant
        self.preset = preset
        self.model_overrides = model_overrides
        self.lambda_cl = lambda_cl
        self.lambda_or = lambda_or
        self.epochs = epochs
        self.warmup_epochs = warmup_epochs
        self.batch_size = batch_size
        self.lr = lr
        self.lr_schedule = lr_schedule
        self.random_state = random_state

    def _configs(self):
        if self.preset not in PRESETS:
            raise ValueError(f"preset must be one of {sorted(PRESETS)}, got {self.preset!r}")
        overrides = dict(self.model_overrides or {})
        overrides.update(n_modes=self.n_modes, variant=self.variant)
        model = PRESETS[self.preset](**overrides)
        loss = LossConfig(lambda_cl=self.lambda_cl, lambda_or=self.lambda_or)
        tr = TrainConfig(epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
                         seed=int(self.random_state), warmup_epochs=self.warmup_epochs,
                         lr_schedule=self.lr_schedule)
        return model, loss, tr

    def _prepare(self, X, cfg: ModelConfig, with_field: bool) -> list[PreparedEpisode]:
        out = []
        for i, ep in enumerate(X):
            if isinstance(ep, PreparedEpisode):
                if ep.raster.shape[1:] != cfg.raster_shape:
                    raise ValueError(f"X[{i}] was prepared for raster {ep.raster.shape[1:]}, "
                                     f"model needs {cfg.raster_shape}")
                if with_field and ep.field is None:
                    raise ValueError(f"X[{i}] was prepared without a distance field")
                out.append(ep)
            else:
                out.append(prepare_episode(ep, cfg, with_field))
        return out

    def fit(self, X, y=None):
        X = check_episodes(X)
        model_cfg, loss_cfg, train_cfg = self._configs()
        futures = check_futures(_futures(X, y), len(X), model_cfg.future_len)
        items = self._prepare(X, model_cfg, with_field=True)
        if y is not None:
            items = [PreparedEpisode(it.target_states, it.neighbor_states, it.neighbor_cells,
                                     it.raster, it.field, f) for it, f in zip(items, futures)]
        telemetry = io.StringIO()
        state = train(items, model_cfg, loss_cfg, train_cfg, telemetry=telemetry)
        self.model_config_ = model_cfg
        self.loss_config_ = loss_cfg
        self.train_config_ = train_cfg
        self.params_ = state.params
        self.state_ = state
        self.training_log_ = [json.loads(line) for line in telemetry.getvalue().splitlines()]
        self.n_episodes_seen_ = len(items)
        return self

    def predict_sets(self, X) -> list[PredictionSet]:
        check_is_fitted(self, "params_")
        X = check_episodes(X)
        items = self._prepare(X, self.model_config_, with_field=False)
        return predict_prepared(items, self.params_, self.model_config_)

    def predict(self, X) -> np.ndarray:
        """Mode means, shape (n, L, T, 2)."""
        return np.stack([p.mu for p in self.predict_sets(X)])

    def predict_proba(self, X) -> np.ndarray:
        """Mode probabilities, shape (n, L)."""
        return np.stack([p.probs for p in self.predict_sets(X)])

    def evaluate(self, X, y=None, **kwargs):
        """Full :class:`~mhajam.metrics.MetricsReport` on ``X``."""
        X = check_episodes(X)
        gts = _futures(X, y)
        preds = self.predict_sets(X)
        rasters = [_raster(ep, self.model_config_) for ep in X]
        return evaluate(preds, gts, rasters, **kwargs)

    def score(self, X, y=None) -> float:
        """Negative MinADE over all modes (greater is better)."""
        rep = self.evaluate(X, y, ks=(self.model_config_.n_modes,))
        return -rep.ade(self.model_config_.n_modes)


class ConstantVelocityPredictor(BaseEstimator):
    """Extrapolates the target's current speed along its heading; ``fit`` only records the horizon."""

    def __init__(self, future_len=12):
        self.future_len = future_len

    def fit(self, X=None, y=None):
        if self.future_len < 1:
            raise ValueError("future_len must be >= 1")
        self.future_len_ = int(self.future_len)
        return self

    def predict(self, X) -> np.ndarray:
        """Point trajectories, shape (n, 1, T, 2)."""
        check_is_fitted(self, "future_len_")
        X = check_episodes(X)
        return np.stack([const_vel_yaw(_target_state(ep), self.future_len_)[None] for ep in X])

    def predict_sets(self, X) -> list[PredictionSet]:
        return [point_prediction(t) for t in self.predict(X)]

    def score(self, X, y=None) -> float:
        X = check_episodes(X)
        rep = evaluate(self.predict_sets(X), _futures(X, y), ks=(1,))
        return -rep.ade(1)


class PhysicsOraclePredictor(ConstantVelocityPredictor):
    """Best of four kinematic models per episode, chosen with the ground truth."""

    def predict(self, X, y=None) -> np.ndarray:
        check_is_fitted(self, "future_len_")
        X = check_episodes(X)
        gts = _futures(X, y)
        return np.stack([physics_oracle(_target_state(ep), g).trajectory[None] for ep, g in zip(X, gts)])

    def predict_sets(self, X, y=None) -> list[PredictionSet]:
        return [point_prediction(t) for t in self.predict(X, y)]

    def score(self, X, y=None) -> float:
        X = check_episodes(X)
        gts = _futures(X, y)
        rep = evaluate(self.predict_sets(X, gts), gts, ks=(1,))
        return -rep.ade(1)
