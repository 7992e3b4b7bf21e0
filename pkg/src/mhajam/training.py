"""Mini-batch Adam training, JSONL telemetry and checkpoints."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .losses import LossConfig, batch_loss
from .model import ModelConfig, PredictionSet, PreparedEpisode, collate, forward, init_params
from .neural import AdamState, ParamStore, Tape, adam_step, load_arrays, save_arrays

log = logging.getLogger(__name__)

CHECKPOINT_KIND = "mhajam-checkpoint"
LR_SCHEDULES = ("constant", "cosine")


class NumericalError(RuntimeError):
    """Raised when the loss becomes non-finite; ``step`` is the offending optimizer step."""

    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batch_size: int = 32
    lr: float = 3e-3
    seed: int = 0
    warmup_epochs: int = 15     # leading epochs scored with unit covariance
    lr_schedule: str = "cosine"     # per-epoch decay from lr towards 0, or "constant"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("TrainConfig.batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("TrainConfig.epochs must be >= 0")
        if self.warmup_epochs < 0:
            raise ValueError("TrainConfig.warmup_epochs must be >= 0")
        if not self.lr > 0:
            raise ValueError("TrainConfig.lr must be > 0")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ValueError(f"TrainConfig.lr_schedule must be one of {LR_SCHEDULES}")

    def lr_at(self, epoch: int) -> float:
        if self.lr_schedule == "cosine" and self.epochs > 0:
            return self.lr * 0.5 * (1.0 + math.cos(math.pi * epoch / self.epochs))
        return self.lr


@dataclass
class TrainState:
    params: ParamStore
    adam: AdamState
    step: int = 0
    epoch: int = 0      # completed epochs


def new_state(model_cfg: ModelConfig, train_cfg: TrainConfig) -> TrainState:
    return TrainState(init_params(model_cfg, train_cfg.seed), AdamState(lr=train_cfg.lr))


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    """Deterministic shuffle of ``n`` items for one epoch."""
    return np.random.default_rng([seed, epoch]).permutation(n)


def train_step(batch, state: TrainState, model_cfg: ModelConfig, loss_cfg: LossConfig,
               unit_covariance: bool = False) -> dict:
    with Tape() as tape:
        out = forward(batch, state.params, model_cfg)
        loss = batch_loss(out, batch.futures, batch.fields, loss_cfg, unit_covariance)
    record = loss.breakdown()
    if not all(math.isfinite(v) for v in record.values()):
        raise NumericalError(state.step + 1, f"non-finite loss {record}")
    tape.backward(loss.total)
    for name, p in state.params.items():
        if not np.all(np.isfinite(p.grad)):
            raise NumericalError(state.step + 1, f"non-finite gradient in {name}")
    adam_step(state.params, state.adam)
    for name, p in state.params.items():
        if not np.all(np.isfinite(p.data)):
            raise NumericalError(state.step + 1, f"update made {name} non-finite")
    state.step += 1
    return record


def train(items: list[PreparedEpisode], model_cfg: ModelConfig, loss_cfg: LossConfig,
          train_cfg: TrainConfig, state: TrainState | None = None, telemetry=None,
          checkpoint_path=None, on_epoch=None) -> TrainState:
    """Train until ``train_cfg.epochs`` epochs are complete.

    ``state`` resumes a previous run from an epoch boundary. ``telemetry`` is a
    writable text stream receiving one JSON object per optimizer step.
    ``checkpoint_path`` is rewritten after every epoch.
    """
    if not items:
        raise ValueError("no training episodes")
    if any(it.field is None or it.future is None for it in items):
        raise ValueError("training episodes need a distance field and ground truth")
    state = state or new_state(model_cfg, train_cfg)
    while state.epoch < train_cfg.epochs:
        order = epoch_order(len(items), train_cfg.seed, state.epoch)
        state.adam.lr = train_cfg.lr_at(state.epoch)
        for i in range(0, len(order), train_cfg.batch_size):
            batch = collate([items[j] for j in order[i:i + train_cfg.batch_size]], model_cfg)
            record = train_step(batch, state, model_cfg, loss_cfg,
                                state.epoch < train_cfg.warmup_epochs)
            if telemetry is not None:
                telemetry.write(json.dumps({"step": state.step, "epoch": state.epoch + 1,
                                            "batch": batch.n_episodes, **record}) + "\n")
        state.epoch += 1
        log.info("epoch %d done at step %d (last total %.4f)", state.epoch, state.step, record["total"])
        if checkpoint_path is not None:
            save_checkpoint(checkpoint_path, state, model_cfg, loss_cfg, train_cfg)
        if on_epoch is not None:
            on_epoch(state)
    return state


def predict_prepared(items: list[PreparedEpisode], params: ParamStore, model_cfg: ModelConfig,
                     batch_size: int = 64) -> list[PredictionSet]:
    out = []
    for i in range(0, len(items), batch_size):
        out.extend(forward(collate(items[i:i + batch_size], model_cfg), params, model_cfg).predictions())
    return out


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(path, state: TrainState, model_cfg: ModelConfig, loss_cfg: LossConfig,
                    train_cfg: TrainConfig):
    arrays = {f"param.{k}": v for k, v in state.params.state().items()}
    arrays.update(state.adam.arrays())
    meta = {
        "kind": CHECKPOINT_KIND,
        "model": model_cfg.to_dict(),
        "loss": asdict(loss_cfg),
        "train": asdict(train_cfg),
        "step": state.step,
        "epoch": state.epoch,
        "adam": {"lr": state.adam.lr, "beta1": state.adam.beta1, "beta2": state.adam.beta2,
                 "eps": state.adam.eps, "step": state.adam.step},
    }
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    save_arrays(tmp, arrays, meta)
    tmp.replace(path)


@dataclass
class Checkpoint:
    model: ModelConfig
    loss: LossConfig
    train: TrainConfig
    state: TrainState


def load_checkpoint(path, expect_model: ModelConfig | None = None) -> Checkpoint:
    arrays, meta = load_arrays(path)
    if meta.get("kind") != CHECKPOINT_KIND:
        raise ValueError(f"{path}: not a model checkpoint")
    model_cfg = ModelConfig.from_dict(meta["model"])
    if expect_model is not None and expect_model != model_cfg:
        raise ValueError(f"{path}: checkpoint model config does not match the requested config")
    params = init_params(model_cfg, 0)
    saved = {k[len("param."):]: v for k, v in arrays.items() if k.startswith("param.")}
    if set(saved) != set(params.names()):
        raise ValueError(f"{path}: parameter names do not match the model config")
    params.load_state(saved)
    adam = AdamState(**meta["adam"])
    adam.load_arrays(arrays)
    state = TrainState(params, adam, int(meta["step"]), int(meta["epoch"]))
    return Checkpoint(model_cfg, LossConfig(**meta["loss"]), TrainConfig(**meta["train"]), state)
