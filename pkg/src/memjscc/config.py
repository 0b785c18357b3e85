"""Run configuration: sections, profiles and merging.

Resolution order is defaults < profile < config file < command-line flags.
Unknown keys anywhere raise :class:`ConfigError`.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .drift import DatasetConfig, DeviceModelParams
from .energy import EnergyModelParams
from .losses import RegularizationConfig
from .model import ArchitectureConfig
from .surrogate import SurrogateFitConfig
from .training import TrainingConfig

FORMAT_VERSION = 1

# short runs need a much larger step than the 50-epoch schedule
DESK_LR = 1e-3


class ConfigError(ValueError):
    pass


@dataclass
class DataConfig:
    source: str = "auto"            # auto | cifar | synthetic
    data_dir: str | None = None
    train_count: int = 50000
    test_count: int = 10000
    image_seed: int = 0

    def __post_init__(self):
        if self.source not in ("auto", "cifar", "synthetic"):
            raise ConfigError(f"unknown image source {self.source!r}")


@dataclass
class EvalConfig:
    delays: list = field(default_factory=lambda: [0, 1, 2, 5, 10, 20, 50,
                                                  100, 200, 500, 1000])
    draws: int = 4
    channel: str = "surrogate"
    seed: int = 0
    ablation_delays: list = field(default_factory=lambda: [1, 10, 100, 1000])

    def __post_init__(self):
        if self.channel not in ("surrogate", "ground-truth", "noiseless"):
            raise ConfigError(f"unknown channel {self.channel!r}")


SECTIONS = {
    "data": DataConfig,
    "dataset": DatasetConfig,
    "surrogate": SurrogateFitConfig,
    "architecture": ArchitectureConfig,
    "regularization": RegularizationConfig,
    "training": TrainingConfig,
    "energy": EnergyModelParams,
    "evaluation": EvalConfig,
}
TOP_LEVEL = {"format_version", "profile", "seed", "budgets", "paths"}
PATH_KEYS = {"dataset", "surrogate", "model", "out"}

PROFILES = {
    "paper": {
        "training": {"batch_size": 32, "lr": 5e-5, "epochs": 50},
        "data": {"train_count": 50000, "test_count": 10000},
        "budgets": [1.0, 0.5, 0.1, 0.05, 0.01],
    },
    "desk": {
        "training": {"batch_size": 32, "lr": DESK_LR, "epochs": 3},
        "data": {"train_count": 2000, "test_count": 500},
        "architecture": {"latent_channels": 8, "conditioning": "both"},
        "regularization": {"e_b": 0.01},
        "dataset": {"count": 500, "r0_spacing": "log", "master_seed": 1},
        "budgets": [0.01],
    },
}


def _field_names(cls) -> set:
    return {f.name for f in fields(cls)}


def _merge(base: dict, over: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v, f"{where}{k}.")
        else:
            out[k] = copy.deepcopy(v)
    return out


def validate_keys(raw: dict):
    for k, v in raw.items():
        if k in SECTIONS:
            if not isinstance(v, dict):
                raise ConfigError(f"section {k!r} must be an object")
            allowed = _field_names(SECTIONS[k])
            bad = set(v) - allowed
            if k == "dataset" and isinstance(v.get("device"), dict):
                bad |= {f"device.{b}" for b in
                        set(v["device"]) - _field_names(DeviceModelParams)}
            if bad:
                raise ConfigError(f"unknown keys in {k!r}: {sorted(bad)}")
        elif k == "paths":
            bad = set(v) - PATH_KEYS
            if bad:
                raise ConfigError(f"unknown keys in 'paths': {sorted(bad)}")
        elif k not in TOP_LEVEL:
            raise ConfigError(f"unknown top-level key {k!r}")


@dataclass
class RunConfig:
    profile: str | None = None
    seed: int = 0
    budgets: list = field(default_factory=lambda: [0.01])
    paths: dict = field(default_factory=dict)
    data: DataConfig = field(default_factory=DataConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    surrogate: SurrogateFitConfig = field(default_factory=SurrogateFitConfig)
    architecture: ArchitectureConfig = field(
        default_factory=ArchitectureConfig)
    regularization: RegularizationConfig = field(
        default_factory=RegularizationConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    energy: EnergyModelParams = field(default_factory=EnergyModelParams)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    format_version: int = FORMAT_VERSION

    def to_dict(self) -> dict:
        d = asdict(self)
        d["architecture"] = self.architecture.to_dict()
        return d

    def write(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2,
                                         sort_keys=True) + "\n")


def _build(raw: dict) -> RunConfig:
    kw = {}
    for name, cls in SECTIONS.items():
        sec = dict(raw.get(name, {}))
        if name == "dataset" and isinstance(sec.get("device"), dict):
            sec["device"] = DeviceModelParams(**sec["device"])
        try:
            kw[name] = cls(**sec)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid {name!r} section: {exc}") from exc
    return RunConfig(profile=raw.get("profile"), seed=int(raw.get("seed", 0)),
                     budgets=list(raw.get("budgets", [0.01])),
                     paths=dict(raw.get("paths", {})),
                     format_version=int(raw.get("format_version",
                                                FORMAT_VERSION)), **kw)


def resolve(file_config: dict | None = None, overrides: dict | None = None,
            profile: str | None = None) -> RunConfig:
    """Merge defaults, a profile, a config dict and flag overrides."""
    file_config = file_config or {}
    overrides = overrides or {}
    validate_keys(file_config)
    validate_keys(overrides)
    if file_config.get("format_version", FORMAT_VERSION) != FORMAT_VERSION:
        raise ConfigError("unsupported config format_version")
    profile = (profile or overrides.get("profile")
               or file_config.get("profile"))
    raw: dict = {}
    if profile is not None:
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}")
        raw = _merge(raw, PROFILES[profile])
        raw["profile"] = profile
    raw = _merge(raw, file_config)
    raw = _merge(raw, overrides)
    if profile is not None:
        raw["profile"] = profile
    cfg = _build(raw)
    # a run-level seed drives every stage unless a section pins its own
    for sec in ("training", "surrogate"):
        if "seed" not in raw.get(sec, {}):
            getattr(cfg, sec).seed = cfg.seed
    return cfg


def load_config_file(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return raw
