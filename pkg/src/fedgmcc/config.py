"""Experiment configuration: nested dataclasses with a YAML representation.

Unknown keys and out-of-range values raise :class:`ConfigError` naming the
offending field (dotted path). ``to_dict`` / ``from_dict`` round-trip.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

STRATEGIES = ("fedavg", "fedprox", "cfl", "fedgmcc")
THREADS_ENV = "FEDGMCC_THREADS"


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class GroupConfig:
    """A block of consecutive clients sharing one heterogeneity recipe."""

    clients: int = 1
    rotation: float = 0.0
    scale: list[float] = field(default_factory=list)
    flip: list[int] = field(default_factory=list)
    concept_shift: float = 0.0


@dataclass
class TaskConfig:
    n: int = 2000
    n_classes: int = 4
    dim: int = 2
    separation: float = 4.0
    hidden: list[int] = field(default_factory=lambda: [16, 16])
    groups: list[GroupConfig] = field(default_factory=list)


@dataclass
class PartitionConfig:
    method: str = "iid"
    target_emd: float | None = None
    bins: int = 4
    max_iters: int = 1000
    move_batch: int | None = None
    seed: int = 0


@dataclass
class GmccSettings:
    epsilon: float | None = None
    adapt: bool = True
    adapt_mode: str = "percentile"
    n_mc: int = 256
    eta: float = 0.1
    steps: int = 2000
    grid_points: int = 21
    theta_init: str = "midpoint"
    normalize: bool = True


@dataclass
class CflSettings:
    eps1: float = 0.2
    gamma: float = 0.0


@dataclass
class Seeds:
    init: int = 0
    data: int = 0
    probe: int = 0
    train: int = 0


@dataclass
class ExperimentConfig:
    strategy: str = "fedgmcc"
    clients: int = 10
    rounds: int = 10
    local_epochs: int = 10
    batch_size: int = 64
    lr: float = 0.001
    mu: float = 0.01
    val_fraction: float = 0.2
    task: TaskConfig = field(default_factory=TaskConfig)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    gmcc: GmccSettings = field(default_factory=GmccSettings)
    cfl: CflSettings = field(default_factory=CflSettings)
    seeds: Seeds = field(default_factory=Seeds)

    def validate(self) -> "ExperimentConfig":
        def need(ok, name, msg):
            if not ok:
                raise ConfigError(name, msg)

        need(self.strategy in STRATEGIES, "strategy", f"must be one of {', '.join(STRATEGIES)}")
        need(self.clients >= 1, "clients", "must be >= 1")
        need(self.rounds >= 0, "rounds", "must be >= 0")
        need(self.local_epochs >= 0, "local_epochs", "must be >= 0")
        need(self.batch_size >= 1, "batch_size", "must be >= 1")
        need(self.lr > 0, "lr", "must be > 0")
        need(self.mu >= 0, "mu", "must be >= 0")
        need(0.0 < self.val_fraction < 1.0, "val_fraction", "must lie in (0, 1)")
        t = self.task
        need(t.n_classes >= 2, "task.n_classes", "must be >= 2")
        need(t.n >= 10 * t.n_classes, "task.n", "must be >= 10 * n_classes")
        need(t.dim >= 1, "task.dim", "must be >= 1")
        need(t.separation > 0, "task.separation", "must be > 0")
        need(all(h >= 1 for h in t.hidden), "task.hidden", "layer sizes must be >= 1")
        for i, g in enumerate(t.groups):
            need(g.clients >= 1, f"task.groups[{i}].clients", "must be >= 1")
            need(0.0 <= g.concept_shift <= 1.0, f"task.groups[{i}].concept_shift", "must lie in [0, 1]")
            need(all(s != 0 for s in g.scale), f"task.groups[{i}].scale", "factors must be nonzero")
            need(all(0 <= a < t.dim for a in g.flip), f"task.groups[{i}].flip", "axis out of range")
            need(g.rotation == 0.0 or t.dim >= 2, f"task.groups[{i}].rotation", "needs dim >= 2")
        if t.groups:
            total = sum(g.clients for g in t.groups)
            need(total == self.clients, "task.groups", f"group sizes sum to {total}, expected {self.clients}")
        p = self.partition
        need(p.method in ("iid", "kmeans"), "partition.method", "must be 'iid' or 'kmeans'")
        need(p.target_emd is None or p.target_emd >= 0, "partition.target_emd", "must be >= 0")
        need(p.bins >= 1, "partition.bins", "must be >= 1")
        need(p.max_iters >= 0, "partition.max_iters", "must be >= 0")
        need(p.move_batch is None or p.move_batch >= 1, "partition.move_batch", "must be >= 1")
        need(t.n * (1 - self.val_fraction) >= 2 * self.clients, "clients", "too many clients for task.n")
        g = self.gmcc
        need(g.epsilon is None or g.epsilon >= 0, "gmcc.epsilon", "must be >= 0")
        need(g.adapt_mode in ("percentile", "multiplicative"), "gmcc.adapt_mode",
             "must be 'percentile' or 'multiplicative'")
        need(g.n_mc >= 1, "gmcc.n_mc", "must be >= 1")
        need(g.eta > 0, "gmcc.eta", "must be > 0")
        need(g.steps >= 0, "gmcc.steps", "must be >= 0")
        need(g.grid_points >= 11, "gmcc.grid_points", "must be >= 11")
        need(g.theta_init in ("sum", "midpoint"), "gmcc.theta_init", "must be 'sum' or 'midpoint'")
        need(g.epsilon is not None or g.adapt, "gmcc.epsilon", "required when adapt is false")
        need(self.cfl.eps1 > 0, "cfl.eps1", "must be > 0")
        need(-1.0 <= self.cfl.gamma <= 1.0, "cfl.gamma", "must lie in [-1, 1]")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        return _build(cls, raw or {}, "").validate()


def _build(cls, raw, prefix):
    if not isinstance(raw, dict):
        raise ConfigError(prefix.rstrip(".") or "<root>", "expected a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        name = f"{prefix}{key}"
        if key not in fields:
            raise ConfigError(name, "unknown key")
        kwargs[key] = _convert(fields[key], value, name)
    return cls(**kwargs)


_NESTED = {
    "task": TaskConfig,
    "partition": PartitionConfig,
    "gmcc": GmccSettings,
    "cfl": CflSettings,
    "seeds": Seeds,
}


def _convert(f, value, name):
    if f.name in _NESTED and f.type in (_NESTED[f.name].__name__, _NESTED[f.name]):
        return _build(_NESTED[f.name], value, name + ".")
    if f.name == "groups":
        if not isinstance(value, list):
            raise ConfigError(name, "expected a list")
        return [_build(GroupConfig, g, f"{name}[{i}].") for i, g in enumerate(value)]
    kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    try:
        if value is None:
            if "None" not in kind:
                raise ConfigError(name, "may not be null")
            return None
        if kind.startswith("bool"):
            if not isinstance(value, bool):
                raise ConfigError(name, "expected true/false")
            return value
        if kind.startswith("int"):
            if isinstance(value, bool) or int(value) != value:
                raise ConfigError(name, "expected an integer")
            return int(value)
        if kind.startswith("float"):
            if isinstance(value, bool):
                raise ConfigError(name, "expected a number")
            return float(value)
        if kind.startswith("list[int]"):
            return [int(v) for v in value]
        if kind.startswith("list[float]"):
            return [float(v) for v in value]
        if kind.startswith("str"):
            if not isinstance(value, str):
                raise ConfigError(name, "expected a string")
            return value
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(name, f"invalid value {value!r}") from None
    return value


def load_config(path) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"not valid YAML: {exc}") from None
    return ExperimentConfig.from_dict(raw)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1
