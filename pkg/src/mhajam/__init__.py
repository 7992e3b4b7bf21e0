"""Multimodal trajectory prediction with multi-head joint agent-map attention."""

from .estimator import ConstantVelocityPredictor, MHAJAMPredictor, PhysicsOraclePredictor
from .losses import LossConfig
from .metrics import MetricsReport, evaluate
from .model import ModelConfig, PredictionSet
from .synth import Episode, ScenarioSpec, generate_dataset, generate_episode
from .training import TrainConfig

__version__ = "0.1.0"

__all__ = [
    "ConstantVelocityPredictor",
    "Episode",
    "LossConfig",
    "MHAJAMPredictor",
    "MetricsReport",
    "ModelConfig",
    "PhysicsOraclePredictor",
    "PredictionSet",
    "ScenarioSpec",
    "TrainConfig",
    "evaluate",
    "generate_dataset",
    "generate_episode",
]
