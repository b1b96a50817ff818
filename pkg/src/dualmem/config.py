"""Experiment configuration: nested dataclasses loaded strictly from YAML.

Unknown keys anywhere in the file are rejected, so typos fail loudly
instead of silently falling back to defaults. See ``configs/`` and the
README for the full key reference.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .deep_memory import DeepConfig, MethodKind
from .fast_memory import FastMemoryConfig
from .nn import LrSchedule
from .streams import StreamSchedule, builtin_nonstationary_schedule

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "config_to_dict"]


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class SyntheticSpec:
    class_count: int = 4
    dim: int = 20
    n_train_per_class: int = 500
    n_test_per_class: int = 200
    separation: float = 6.0


@dataclass
class DatasetSpec:
    source: str = "mnist"  # mnist | synthetic
    path: str | None = None  # directory holding the four MNIST IDX files
    train_limit: int | None = None
    test_limit: int | None = None
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)


@dataclass
class ScheduleSpec:
    kind: str = "stationary-k-split"
    k: int = 10
    proportion: float = 0.5
    class_mix: Any = None  # "builtin" or a list of {class: fraction} maps


@dataclass
class StepDecaySpec:
    base_rate: float = 0.01
    decay_factor: float = 10.0
    drop_points: list[int] = field(default_factory=lambda: [15])


@dataclass
class NetworkSpec:
    hidden: list[int] = field(default_factory=lambda: [100])
    input_dim: int | None = None  # checked against the dataset when given
    epochs: int = 20
    bootstrap_epochs: int | None = None
    batch_epochs: int | None = None
    spawn_epochs: int | None = None
    batch_size: int = 64
    momentum: float = 0.9
    step_decay: StepDecaySpec = field(default_factory=StepDecaySpec)
    inv_sqrt_base_rate: float = 0.1


@dataclass
class MemorySpec:
    n_subset: int = 6000
    n_new: int = 600


@dataclass
class FastMemorySpec:
    enabled: bool = False
    kernels_per_block: int | None = None
    keep_fraction: float = 0.75
    order: int = 2
    refit_storage: str = "seen"  # seen | window
    trace_every: int = 0
    trace_test_size: int = 1000


@dataclass
class ExperimentConfig:
    method: str = "neural-prior-ensemble"
    seed: int = 0
    output_dir: str = "runs/default"
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    network: NetworkSpec = field(default_factory=NetworkSpec)
    memory: MemorySpec = field(default_factory=MemorySpec)
    fast_memory: FastMemorySpec = field(default_factory=FastMemorySpec)
    checkpoint: bool = True

    @property
    def method_kind(self) -> MethodKind:
        return MethodKind(self.method)

    def validate(self) -> "ExperimentConfig":
        try:
            kind = MethodKind(self.method)
        except ValueError:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {[m.value for m in MethodKind]}")
        if self.dataset.source not in ("mnist", "synthetic"):
            raise ConfigError(f"unknown dataset source {self.dataset.source!r}")
        if self.dataset.source == "mnist" and not self.dataset.path:
            raise ConfigError("dataset.path is required for mnist")
        m = self.memory
        if m.n_subset < 1 or m.n_new < 1:
            raise ConfigError("memory.n_subset and memory.n_new must be positive")
        if kind.slides and m.n_subset % m.n_new:
            raise ConfigError(f"n_subset={m.n_subset} must be divisible by n_new={m.n_new}")
        net = self.network
        if not net.hidden or any(h < 1 for h in net.hidden):
            raise ConfigError("network.hidden must list positive widths")
        if net.step_decay.base_rate <= 0 or net.inv_sqrt_base_rate <= 0:
            raise ConfigError("learning rates must be positive")
        if net.step_decay.decay_factor <= 1:
            raise ConfigError("step_decay.decay_factor must exceed 1")
        if net.epochs < 1 or net.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if not 0 <= net.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        fm = self.fast_memory
        if fm.enabled and not kind.is_ensemble:
            raise ConfigError(f"fast memory needs an ensemble method, not {kind.value}")
        if fm.refit_storage not in ("seen", "window"):
            raise ConfigError("fast_memory.refit_storage must be 'seen' or 'window'")
        if not 0 < fm.keep_fraction <= 1:
            raise ConfigError("fast_memory.keep_fraction must lie in (0, 1]")
        try:
            self.stream_schedule()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def stream_schedule(self) -> StreamSchedule:
        s = self.schedule
        if s.kind == "class-schedule" and (s.class_mix is None or s.class_mix == "builtin"):
            return builtin_nonstationary_schedule(seed=self.seed)
        return StreamSchedule(s.kind, k=s.k, proportion=s.proportion, class_mix=s.class_mix, seed=self.seed)

    def deep_config(self, input_dim: int, class_count: int) -> DeepConfig:
        net = self.network
        if net.input_dim is not None and net.input_dim != input_dim:
            raise ConfigError(f"network.input_dim={net.input_dim} but the dataset has {input_dim} features")
        return DeepConfig(
            layer_dims=(input_dim, *net.hidden, class_count),
            n_subset=self.memory.n_subset,
            n_new=self.memory.n_new,
            epochs=net.epochs,
            batch_size=net.batch_size,
            momentum=net.momentum,
            step_decay=LrSchedule("step-decay", net.step_decay.base_rate, net.step_decay.decay_factor,
                                  tuple(net.step_decay.drop_points)),
            inv_sqrt=LrSchedule("inv-sqrt", net.inv_sqrt_base_rate),
            bootstrap_epochs=net.bootstrap_epochs,
            batch_epochs=net.batch_epochs,
            spawn_epochs=net.spawn_epochs,
        )

    def fast_config(self) -> FastMemoryConfig:
        fm = self.fast_memory
        return FastMemoryConfig(fm.kernels_per_block, fm.keep_fraction, fm.order)


def _build(cls, data: Any, where: str):
    if not dataclasses.is_dataclass(cls):
        return data
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        hint = hints[key]
        kwargs[key] = _build(hint, value, f"{where}.{key}" if where else key) if dataclasses.is_dataclass(hint) else value
    return cls(**kwargs)


def config_from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data, "").validate()


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from exc
    try:
        return config_from_dict(data or {})
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)
