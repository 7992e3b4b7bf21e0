"""Run configuration: TOML file plus command-line overrides (overrides win)."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import tomli

from .losses import LossConfig
from .metrics import DEFAULT_DS, DEFAULT_KS, OFFROAD_RULES
from .model import ModelConfig
from .training import TrainConfig

PRESETS = ("desk", "compact", "tiny", "paper")


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending key."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class EvalConfig:
    ks: tuple = DEFAULT_KS
    ds: tuple = DEFAULT_DS
    offroad_rule: str = "any"
    offroad_k: int | None = None


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig.compact)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    data: dict = field(default_factory=dict)    # named dataset paths, e.g. train / test
    preset: str = "compact"

    def to_dict(self) -> dict:
        return {"preset": self.preset, "model": self.model.to_dict(), "loss": asdict(self.loss),
                "train": asdict(self.train),
                "eval": {**asdict(self.eval), "ks": list(self.eval.ks), "ds": list(self.eval.ds)},
                "data": dict(self.data)}


def _base_model(preset: str, overrides: dict) -> ModelConfig:
    if preset == "desk":
        return ModelConfig(**overrides)
    if preset == "compact":
        return ModelConfig.compact(**overrides)
    if preset == "tiny":
        return ModelConfig.tiny(**overrides)
    return ModelConfig.paper_scale(**overrides)


def _section(raw: dict, name: str, cls) -> dict:
    sec = raw.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(name, "must be a table")
    known = {f.name for f in fields(cls)}
    for key in sec:
        if key not in known:
            raise ConfigError(f"{name}.{key}", "unknown field")
    return dict(sec)


def build_run_config(raw: dict) -> RunConfig:
    """Validate a nested dict (as parsed from TOML) into a RunConfig."""
    unknown = set(raw) - {"preset", "model", "loss", "train", "eval", "data"}
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown section")
    preset = raw.get("preset", "compact")
    if preset not in PRESETS:
        raise ConfigError("preset", f"must be one of {PRESETS}, got {preset!r}")
    parts = {}
    for name, cls in (("model", ModelConfig), ("loss", LossConfig), ("train", TrainConfig),
                      ("eval", EvalConfig)):
        sec = _section(raw, name, cls)
        try:
            if name == "model":
                parts[name] = _base_model(preset, sec)
            elif name == "eval":
                parts[name] = _eval_config(sec)
            else:
                parts[name] = cls(**sec)
        except ConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError(name, str(e)) from e
    data = raw.get("data", {})
    if not isinstance(data, dict) or not all(isinstance(v, str) for v in data.values()):
        raise ConfigError("data", "must map names to path strings")
    return RunConfig(parts["model"], parts["loss"], parts["train"], parts["eval"], dict(data), preset)


def _eval_config(sec: dict) -> EvalConfig:
    ks = tuple(sec.get("ks", DEFAULT_KS))
    ds = tuple(float(d) for d in sec.get("ds", DEFAULT_DS))
    if not ks or not all(isinstance(k, int) and k >= 1 for k in ks):
        raise ConfigError("eval.ks", "must be a non-empty list of positive integers")
    if not ds or not all(d > 0 for d in ds):
        raise ConfigError("eval.ds", "must be a non-empty list of positive distances")
    rule = sec.get("offroad_rule", "any")
    if rule not in OFFROAD_RULES:
        raise ConfigError("eval.offroad_rule", f"must be one of {OFFROAD_RULES}")
    ok = sec.get("offroad_k")
    if ok is not None and (not isinstance(ok, int) or ok < 1):
        raise ConfigError("eval.offroad_k", "must be a positive integer")
    return EvalConfig(ks, ds, rule, ok)


def apply_overrides(raw: dict, overrides: dict) -> dict:
    """Set dotted keys (``"train.epochs"``) in a copy of ``raw``; ``None`` values are skipped."""
    out = {k: (dict(v) if isinstance(v, dict) else v) for k, v in raw.items()}
    for key, value in overrides.items():
        if value is None:
            continue
        head, _, rest = key.partition(".")
        if not rest:
            out[head] = value
        else:
            out.setdefault(head, {})[rest] = value
    return out


def load_run_config(path=None, overrides: dict | None = None) -> RunConfig:
    raw = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = tomli.load(fh)
        except tomli.TOMLDecodeError as e:
            raise ConfigError(str(path), f"invalid TOML ({e})") from e
    return build_run_config(apply_overrides(raw, overrides or {}))
