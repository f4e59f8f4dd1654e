"""Run configuration: model shape, training schedule, text serialization.

Config files are versioned flat key-value text so a run's manifest can embed
an exact, hashable snapshot:

    hrlt-config v1
    model.d_h = 128
    ...
    train.clip_norm = 5.0

The model section's hash is stored in checkpoints; evaluation refuses a
checkpoint whose model section differs from the active config.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass

CONFIG_HEADER = "hrlt-config v1"


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    d_h: int = 128           # encoder token-vector width
    d_s: int = 300           # high/low state width
    d_emb: int = 300         # sentiment and tag embedding width
    d_pos: int = 25          # POS embedding width
    activation: str = "tanh"
    low_policy_shared: bool = False  # one shared action matrix + sentiment feature
    anchor_mode: str = "opinion_end"  # or "opinion_start"
    encoder: str = "trainable"        # or "cache:<path>"
    cache_fallback: bool = False      # fall back to the trainable encoder on cache miss

    def __post_init__(self) -> None:
        for field in ("d_h", "d_s", "d_emb", "d_pos"):
            if getattr(self, field) <= 0:
                raise ConfigError(f"model.{field} must be positive")
        if self.d_h % 2 != 0:
            raise ConfigError("model.d_h must be even (two recurrent directions)")
        if self.activation not in ("tanh", "relu"):
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.anchor_mode not in ("opinion_end", "opinion_start"):
            raise ConfigError(f"unknown anchor_mode {self.anchor_mode!r}")
        if self.encoder != "trainable" and not self.encoder.startswith("cache:"):
            raise ConfigError(f"encoder must be 'trainable' or 'cache:<path>', got {self.encoder!r}")

    @property
    def cache_path(self) -> str | None:
        return self.encoder[len("cache:"):] if self.encoder.startswith("cache:") else None


@dataclass
class TrainConfig:
    pretrain_epochs: int = 40
    pretrain_lr: float = 2e-5
    finetune_epochs: int = 15
    finetune_lr: float = 5e-6
    trajectories_per_example: int = 5
    batch_size: int = 16
    dropout: float = 0.5
    seed: int = 0
    lambda_b: float = 1.0
    lambda_i: float = 0.7
    lambda_o: float = 0.1
    beta: float = 1.0
    gamma: float = 1.0
    clip_norm: float = 5.0
    baseline: str = "mean"  # or "none"

    def __post_init__(self) -> None:
        if self.pretrain_epochs < 0 or self.finetune_epochs < 0:
            raise ConfigError("epoch counts must be >= 0")
        if self.pretrain_lr <= 0 or self.finetune_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if self.trajectories_per_example < 1 or self.batch_size < 1:
            raise ConfigError("trajectories_per_example and batch_size must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        for name in ("lambda_b", "lambda_i", "lambda_o"):
            if getattr(self, name) < 0:
                raise ConfigError(f"train.{name} must be >= 0")
        if self.beta <= 0:
            raise ConfigError("train.beta must be positive")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError("train.gamma must lie in (0, 1]")
        if self.baseline not in ("mean", "none"):
            raise ConfigError(f"unknown baseline mode {self.baseline!r}")

    @property
    def lambdas(self) -> tuple[float, float, float]:
        return (self.lambda_b, self.lambda_i, self.lambda_o)


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(raw: str, target_type: type):
    raw = raw.strip()
    if target_type is bool:
        if raw not in ("true", "false"):
            raise ConfigError(f"expected true/false, got {raw!r}")
        return raw == "true"
    if target_type is int:
        return int(raw)
    if target_type is float:
        return float(raw)
    return raw


def serialize_config(model: ModelConfig, train: TrainConfig) -> str:
    lines = [CONFIG_HEADER]
    for field in dataclasses.fields(ModelConfig):
        lines.append(f"model.{field.name} = {_format_value(getattr(model, field.name))}")
    for field in dataclasses.fields(TrainConfig):
        lines.append(f"train.{field.name} = {_format_value(getattr(train, field.name))}")
    return "\n".join(lines) + "\n"


def loads_config(text: str) -> tuple[ModelConfig, TrainConfig]:
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln and not ln.startswith("#")]
    if not lines or lines[0] != CONFIG_HEADER:
        raise ConfigError(f"config must start with {CONFIG_HEADER!r}")
    values: dict[str, str] = {}
    for ln in lines[1:]:
        if "=" not in ln:
            raise ConfigError(f"bad config line: {ln!r}")
        key, raw = ln.split("=", 1)
        values[key.strip()] = raw.strip()
    return _build_configs(values)


def _build_configs(values: dict[str, str]) -> tuple[ModelConfig, TrainConfig]:
    model_kwargs = {}
    train_kwargs = {}
    model_fields = {f.name: f.type for f in dataclasses.fields(ModelConfig)}
    train_fields = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    type_of = {"int": int, "float": float, "bool": bool, "str": str}
    for key, raw in values.items():
        section, _, name = key.partition(".")
        if section == "model" and name in model_fields:
            model_kwargs[name] = _parse_value(raw, type_of[model_fields[name]])
        elif section == "train" and name in train_fields:
            train_kwargs[name] = _parse_value(raw, type_of[train_fields[name]])
        else:
            raise ConfigError(f"unknown config key {key!r}")
    return ModelConfig(**model_kwargs), TrainConfig(**train_kwargs)


def load_config(path: str) -> tuple[ModelConfig, TrainConfig]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return loads_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def apply_overrides(
    model: ModelConfig, train: TrainConfig, overrides: dict[str, str]
) -> tuple[ModelConfig, TrainConfig]:
    """Apply dotted-key command-line overrides on top of loaded configs."""
    values = {}
    for field in dataclasses.fields(ModelConfig):
        values[f"model.{field.name}"] = _format_value(getattr(model, field.name))
    for field in dataclasses.fields(TrainConfig):
        values[f"train.{field.name}"] = _format_value(getattr(train, field.name))
    for key, raw in overrides.items():
        if key not in values:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = raw
    return _build_configs(values)


def model_config_hash(model: ModelConfig) -> bytes:
    """32-byte digest of the model section; pins checkpoint/config compatibility.

    The cache file location is not part of the hash (moving a cache does not
    change the model); the encoder mode itself is.
    """
    lines = []
    for field in dataclasses.fields(ModelConfig):
        value = getattr(model, field.name)
        if field.name == "encoder":
            value = "cache" if model.cache_path is not None else "trainable"
        lines.append(f"model.{field.name} = {_format_value(value)}")
    return hashlib.sha256("\n".join(lines).encode("utf-8")).digest()
