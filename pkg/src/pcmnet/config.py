"""Experiment configuration: one root record with nested per-component
configs, strict unknown-key rejection, and dotted-path overrides."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .device import DeviceConfig
from .network import TrainConfig
from .quantize import AnnealConfig
from .repair import RepairConfig


class ConfigError(ValueError):
    pass


@dataclass
class DatasetConfig:
    source: str = "synthetic"  # "synthetic" or "idx"
    images_path: str = ""
    labels_path: str = ""
    n_train: int = 1500
    n_test: int = 400
    seed: int = 7


@dataclass
class ExperimentConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    anneal: AnnealConfig = field(default_factory=AnnealConfig)
    device: DeviceConfig = field(default_factory=DeviceConfig)
    repair: RepairConfig = field(default_factory=RepairConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    variants: list = field(
        default_factory=lambda: ["self_repair", "no_repair", "noise_aware", "drift_comp"]
    )
    delta_write: float = 0.01
    epsilon_read: float = 0.002
    steps: int = 20
    step_seconds: float = 300.0
    rng_seed: int = 0
    out_dir: str = "out"

    def validate(self):
        try:
            self.train.validate()
            self.anneal.validate()
            self.device.validate()
            self.repair.validate()
        except ValueError as e:
            raise ConfigError(str(e)) from e
        known = {"self_repair", "no_repair", "noise_aware", "drift_comp"}
        bad = set(self.variants) - known
        if bad:
            raise ConfigError(f"unknown variants {sorted(bad)}; known: {sorted(known)}")


def _from_dict(cls, data: dict, path: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} under {path or 'root'}")
    kwargs = {}
    for name, value in data.items():
        ftype = fields[name].type
        sub = {"train": TrainConfig, "anneal": AnnealConfig, "device": DeviceConfig,
               "repair": RepairConfig, "dataset": DatasetConfig}.get(name)
        if sub is not None and isinstance(value, dict):
            kwargs[name] = _from_dict(sub, value, f"{path}{name}.")
        else:
            kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(data: dict) -> ExperimentConfig:
    cfg = _from_dict(ExperimentConfig, data, "")
    cfg.validate()
    return cfg


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from e
    return config_from_dict(data)


def _coerce(current, text: str):
    if isinstance(current, bool):
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"cannot parse {text!r} as bool")
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    if isinstance(current, list):
        return [s.strip() for s in text.split(",") if s.strip()]
    return text


def apply_override(cfg: ExperimentConfig, dotted: str):
    """Apply one 'a.b.c=value' override in place."""
    if "=" not in dotted:
        raise ConfigError(f"override {dotted!r} must look like key.path=value")
    keypath, text = dotted.split("=", 1)
    parts = keypath.strip().split(".")
    obj = cfg
    for p in parts[:-1]:
        if not hasattr(obj, p):
            raise ConfigError(f"unknown config path {keypath!r}")
        obj = getattr(obj, p)
    leaf = parts[-1]
    if not dataclasses.is_dataclass(obj) or not hasattr(obj, leaf):
        raise ConfigError(f"unknown config path {keypath!r}")
    setattr(obj, leaf, _coerce(getattr(obj, leaf), text.strip()))
