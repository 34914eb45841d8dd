"""Run configuration: one TOML file with model/train/sim/data/evaluate/analyze sections."""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from iol.trajectory_store import ValidationError


class ConfigError(ValidationError):
    pass


@dataclass
class ModelSection:
    memory_dim: int = 16
    hidden: int = 64
    lstm_hidden: int = 64
    summary_offset: str = "prev"
    forget_bias: float = 1.0
    residual_transition: bool = False


@dataclass
class TrainSection:
    lr: float = 1e-3
    epochs: int = 50
    batch_size: int = 32
    mc_samples: int = 1
    seed: int = 0
    clip_norm: float = 5.0
    patience: int = 10
    kl_warmup_epochs: int = 5
    lr_schedule: str = "constant"
    min_lr_ratio: float = 0.1


@dataclass
class SimSection:
    n_traj: int = 2000
    horizon: int = 50
    context_dim: int = 5
    # "lambda" in the file; renamed because it is a Python keyword
    learning_rate: float = 0.05
    noise_std: float = 0.5
    seed: int = 0
    agent_prior: str = "shared"


@dataclass
class DataSection:
    format: str = "jsonl"
    split_seed: int = 0
    fractions: list = field(default_factory=lambda: [0.8, 0.1, 0.1])


@dataclass
class EvaluateSection:
    baselines: list = field(default_factory=lambda: ["bc-linear", "bc-deep", "rcal", "cirl"])
    repetitions: int = 10
    seed: int = 0


@dataclass
class AnalyzeSection:
    n_bins: int = 5
    shift_mode: str = "at_context"
    split: str = "test"


@dataclass
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    sim: SimSection = field(default_factory=SimSection)
    data: DataSection = field(default_factory=DataSection)
    evaluate: EvaluateSection = field(default_factory=EvaluateSection)
    analyze: AnalyzeSection = field(default_factory=AnalyzeSection)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["sim"]["lambda"] = d["sim"].pop("learning_rate")
        return d


_ALIASES = {("sim", "lambda"): "learning_rate"}


def _coerce(section: str, name: str, value, default):
    key = f"{section}.{name}"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key} must be a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{key} must be a list, got {value!r}")
        return value
    return value


def from_dict(raw: dict) -> RunConfig:
    config = RunConfig()
    for section, values in raw.items():
        if not hasattr(config, section):
            raise ConfigError(f"unknown config section {section!r}")
        if not isinstance(values, dict):
            raise ConfigError(f"config section {section!r} must be a table")
        target = getattr(config, section)
        known = {f.name for f in fields(target)}
        # internal names of aliased fields are not valid file keys
        hidden = {n for (s, _), n in _ALIASES.items() if s == section}
        for key, value in values.items():
            name = _ALIASES.get((section, key), key)
            if name not in known or key in hidden:
                raise ConfigError(f"unknown config key {section}.{key}")
            setattr(target, name, _coerce(section, key, value, getattr(target, name)))
    return config


def load_config(path) -> RunConfig:
    try:
        raw = tomllib.loads(Path(path).read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return from_dict(raw)


def override(config: RunConfig, key: str, value) -> None:
    """Set ``section.key`` from a command-line flag."""
    section, _, key_name = key.partition(".")
    if section not in {f.name for f in fields(config)}:
        raise ConfigError(f"unknown config section {section!r}")
    target = getattr(config, section)
    hidden = {n for (s, _), n in _ALIASES.items() if s == section}
    name = _ALIASES.get((section, key_name), key_name)
    if name not in {f.name for f in fields(target)} or key_name in hidden:
        raise ConfigError(f"unknown config key {key}")
    setattr(target, name, _coerce(section, key_name, value, getattr(target, name)))


def dumps_toml(config: RunConfig) -> str:
    lines = []
    for section, values in config.to_dict().items():
        lines.append(f"[{section}]")
        for key, value in values.items():
            lines.append(f"{key} = {_toml_value(value)}")
        lines.append("")
    return "\n".join(lines)


def _toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(value, list):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    return repr(value)
