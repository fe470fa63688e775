"""Experiment configuration: a flat ``key = value`` file with sections, plus overrides."""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .backbone import BackboneConfig
from .fatm import DEFAULT_KERNELS
from .heads import TASKS
from .model import ABLATIONS


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    task: str = "forecasting"
    # dataset: "synth" or a CSV path
    dataset: str = "synth"
    synth_kind: str = "sine+trend+noise"
    synth_length: int = 2048
    synth_period: float = 24.0
    synth_slope: float = 0.0005
    synth_noise: float = 0.1
    train_fraction: float = 0.7
    patch_len: int = 16
    stride: int = 16
    context_len: int = 256
    horizon: int = 96
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    kernel_sizes: tuple[int, ...] = DEFAULT_KERNELS
    lam: float = 0.1
    alpha: float = 0.99
    # anomaly task: trailing share of the training split held out from updates to set tau
    calib_fraction: float = 0.2
    missing_rate: float = 0.25
    few_shot_fraction: float | None = None
    ablation: tuple[str, ...] = ()
    epochs: int = 50
    batch: int = 16
    lr: float = 1e-3
    seed: int = 0
    corpus: str | None = None
    query: str = "forecast the next values of the series"
    top_k: int = 3
    timing: bool = False

    def validate(self) -> "ExperimentConfig":
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda must lie in [0, 1], got {self.lam}")
        if not 0.0 < self.missing_rate < 1.0:
            raise ConfigError(f"missing_rate must lie in (0, 1), got {self.missing_rate}")
        if self.few_shot_fraction is not None and not 0.0 < self.few_shot_fraction <= 1.0:
            raise ConfigError(f"few-shot fraction must lie in (0, 1], got {self.few_shot_fraction}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0.0 <= self.calib_fraction < 1.0:
            raise ConfigError(f"calib_fraction must lie in [0, 1), got {self.calib_fraction}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        bad = set(self.ablation) - set(ABLATIONS)
        if bad:
            raise ConfigError(f"unknown ablation flag(s) {sorted(bad)}; expected {ABLATIONS}")
        for name in ("patch_len", "stride", "context_len", "horizon", "epochs", "batch"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.context_len < self.patch_len:
            raise ConfigError(f"context_len {self.context_len} is shorter than one patch")
        try:
            self.backbone.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kernel_sizes"] = list(self.kernel_sizes)
        d["ablation"] = list(self.ablation)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        bb = d.pop("backbone", {}) or {}
        cfg = cls(**{k: v for k, v in d.items() if k in _FIELD_TYPES})
        cfg.backbone = BackboneConfig(**bb)
        cfg.kernel_sizes = tuple(cfg.kernel_sizes)
        cfg.ablation = tuple(cfg.ablation)
        return cfg

    def replace(self, **changes) -> "ExperimentConfig":
        d = self.to_dict()
        bb = d["backbone"]
        for k, v in changes.items():
            if k in _BACKBONE_TYPES:
                bb[k] = v
            else:
                d[k] = v
        return ExperimentConfig.from_dict(d)


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}
_BACKBONE_TYPES = {f.name: f.type for f in fields(BackboneConfig)}


def _coerce(key: str, raw: str):
    """Parse a config string by the declared type of ``key``."""
    raw = raw.strip()
    kind = _BACKBONE_TYPES.get(key) or _FIELD_TYPES.get(key)
    if kind is None:
        raise ConfigError(f"unknown config key {key!r}")
    kind = str(kind)
    if raw.lower() in ("none", "") and "None" in kind:
        return None
    try:
        if kind.startswith("tuple"):
            return tuple(int(t) if key == "kernel_sizes" else t.strip()
                         for t in raw.replace(";", ",").split(",") if t.strip())
        if kind.startswith("bool"):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if kind.startswith("int"):
            return int(raw)
        if kind.startswith("float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {key} ({kind})") from None
    return raw


def parse_overrides(pairs: list[str]) -> dict:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not key=value")
        k, v = pair.split("=", 1)
        k = k.strip()
        out[k] = _coerce(k, v)
    return out


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Read every section of an INI-style file into one flat namespace.

    Keys belonging to the backbone may live in any section (conventionally
    ``[backbone]``). ``overrides`` (already typed) win over the file.
    """
    values: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} not found")
        parser = configparser.ConfigParser()
        parser.optionxform = str
        parser.read(path, encoding="utf-8")
        for section in parser.sections():
            for key, raw in parser.items(section):
                values[key] = _coerce(key, raw)
    values.update(overrides or {})
    return ExperimentConfig().replace(**values).validate()
