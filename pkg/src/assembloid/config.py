"""Experiment configuration with strict JSON loading (unknown keys are errors)."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .assembler import AssemblyConfig, CollisionConfig
from .datagen import LEVELS
from .tiny import TrainHyper


class ConfigError(ValueError):
    pass


@dataclass
class DenoiserSpec:
    """``memorized`` and ``gmm`` are oracles built from each scene's ground truth."""

    kind: str = "memorized"
    checkpoint: str | None = None
    variance: float = 1e-4
    blend: float = 1.0

    def __post_init__(self):
        if self.kind not in ("memorized", "gmm", "tiny"):
            raise ConfigError(f"denoiser kind must be memorized, gmm or tiny, got {self.kind!r}")


@dataclass
class ScheduleSpec:
    Z: int = 200
    sigma_max: float = 0.99


@dataclass
class GenSpec:
    family: str = "chair"
    count: int = 10
    points_per_part: int = 128
    legs: int = 4
    arms: bool = False


@dataclass
class SimpleSpec:
    learning_rate: float = 0.05
    iterations: int = 500
    momentum: float = 0.9
    sample_Z: int = 200


@dataclass
class ExperimentConfig:
    dataset: str | None = None
    output: str = "runs"
    seed: int = 0
    trials: int = 1
    level: str = "slight"
    workers: int | None = None
    snapshot_every: int = 0
    thre: float = 0.01
    rot_mode: str = "geodesic"
    gen: GenSpec = field(default_factory=GenSpec)
    denoiser: DenoiserSpec = field(default_factory=DenoiserSpec)
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    assembly: AssemblyConfig = field(default_factory=AssemblyConfig)
    simple: SimpleSpec = field(default_factory=SimpleSpec)
    train: TrainHyper = field(default_factory=TrainHyper)

    def validate(self, need_dataset: bool = False) -> None:
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.level not in LEVELS:
            raise ConfigError(f"unknown level {self.level!r}; expected one of {sorted(LEVELS)}")
        if self.rot_mode not in ("geodesic", "euler"):
            raise ConfigError(f"rot_mode must be geodesic or euler, got {self.rot_mode!r}")
        if need_dataset:
            if not self.dataset or not (Path(self.dataset) / "manifest.json").is_file():
                raise ConfigError(f"dataset {self.dataset!r} has no manifest.json")
            if self.denoiser.kind == "tiny" and not (self.denoiser.checkpoint and Path(self.denoiser.checkpoint).is_file()):
                raise ConfigError(f"denoiser checkpoint {self.denoiser.checkpoint!r} does not exist")

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


_NESTED = {
    ExperimentConfig: {"gen": GenSpec, "denoiser": DenoiserSpec, "schedule": ScheduleSpec,
                       "assembly": AssemblyConfig, "simple": SimpleSpec, "train": TrainHyper},
    AssemblyConfig: {"collision": CollisionConfig},
}


def from_dict(cls, data: dict, where: str = ""):
    """Build ``cls`` from ``data``, recursing into nested dataclasses."""
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown keys {unknown}")
    kwargs = {}
    for key, value in data.items():
        sub = _NESTED.get(cls, {}).get(key)
        kwargs[key] = from_dict(sub, value, f"{where}{key}.") if sub else value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where or 'config'}: {e}") from e


def load_config(path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e
    return from_dict(ExperimentConfig, data)
