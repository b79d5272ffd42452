"""Experiment configuration: one YAML file, validated into frozen dataclasses.

Top-level keys mirror the dataclass fields below. Every RNG seed is
explicit, and `schema_version` must match SCHEMA_VERSION.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from ..beam_select import SelectionConfig
from ..channel import ChannelConfig
from ..ensemble import EnsembleConfig
from ..neuralnet import Activation, InceptionSpec, NetworkSpec, TrainConfig

SCHEMA_VERSION = 1
STRATEGIES = ("zf", "oracle", "greedy", "cnn", "ensemble", "knn", "svm", "mlp")
LEARNED = ("cnn", "ensemble", "knn", "svm", "mlp")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetConfig:
    n_realizations: int = 1000
    n_eval_realizations: int = 200
    train_fraction: float = 0.7
    seed: int = 0  # realizations used for training data
    split_seed: int = 0
    eval_seed: int = 1_000_003  # fresh evaluation realizations, disjoint stream from `seed`
    label_snr_db: float = 10.0
    image_side: int = 32
    embedding: str = "outer"
    with_gmm: bool = False

    def __post_init__(self):
        if self.n_realizations < 2:
            raise ConfigError("dataset.n_realizations must be >= 2")
        if self.n_eval_realizations < 1:
            raise ConfigError("dataset.n_eval_realizations must be >= 1")
        if not 0 < self.train_fraction < 1:
            raise ConfigError("dataset.train_fraction must lie in (0, 1)")
        if self.embedding not in ("outer", "tile"):
            raise ConfigError("dataset.embedding must be 'outer' or 'tile'")
        if self.seed == self.eval_seed:
            raise ConfigError("dataset.eval_seed must differ from dataset.seed")


@dataclass(frozen=True)
class SweepConfig:
    snr_db: tuple = (0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0)
    n_streams: tuple = (4, 5, 6, 7, 8, 9, 10)
    n_streams_snr_db: float = 10.0

    def __post_init__(self):
        object.__setattr__(self, "snr_db", tuple(float(v) for v in self.snr_db))
        object.__setattr__(self, "n_streams", tuple(int(v) for v in self.n_streams))
        for name in ("snr_db", "n_streams"):
            v = getattr(self, name)
            if not v:
                raise ConfigError(f"sweeps.{name} must be nonempty")
            if list(v) != sorted(v) or len(set(v)) != len(v):
                raise ConfigError(f"sweeps.{name} must be strictly increasing")
        if min(self.n_streams) < 1:
            raise ConfigError("sweeps.n_streams entries must be >= 1")


@dataclass(frozen=True)
class BaselineConfig:
    knn_k: int = 5
    svm_lambda: float = 1e-3
    svm_lr: float = 1e-2
    svm_epochs: int = 30
    mlp_widths: tuple = (64, 32)

    def __post_init__(self):
        object.__setattr__(self, "mlp_widths", tuple(int(w) for w in self.mlp_widths))


@dataclass(frozen=True)
class ExperimentConfig:
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    net: NetworkSpec = field(default_factory=NetworkSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    ensemble_train: TrainConfig | None = None  # weak-learner schedule; None -> `train`
    baselines: BaselineConfig = field(default_factory=BaselineConfig)
    sweeps: SweepConfig = field(default_factory=SweepConfig)
    strategies: tuple = STRATEGIES
    activations: tuple = ("relu", "swish")
    optimizers: tuple = ("sgdm", "adam", "rmsprop")
    seeds: tuple = (0,)
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        object.__setattr__(self, "strategies", tuple(str(s).lower() for s in self.strategies))
        unknown = [s for s in self.strategies if s not in STRATEGIES]
        if unknown:
            raise ConfigError(f"strategies: unknown {unknown}; implemented: {list(STRATEGIES)}")
        if not self.strategies:
            raise ConfigError("strategies must be nonempty")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.seeds:
            raise ConfigError("seeds must be nonempty")
        object.__setattr__(self, "activations", tuple(str(Activation.parse(a)) for a in self.activations))
        object.__setattr__(self, "optimizers", tuple(str(o).lower() for o in self.optimizers))
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"schema_version {self.schema_version} unsupported (expected {SCHEMA_VERSION})")
        n_classes = self.selection.n_rf_tx + 1
        if self.net.n_classes != n_classes:
            object.__setattr__(self, "net", replace(self.net, n_classes=n_classes))

    @property
    def weak_train(self) -> TrainConfig:
        return self.ensemble_train or self.train

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seeds=(int(seed),))

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "channel": self.channel.to_dict(),
            "selection": self.selection.to_dict(),
            "dataset": asdict(self.dataset),
            "net": self.net.to_dict(),
            "train": self.train.to_dict(),
            "ensemble": self.ensemble.to_dict(),
            "ensemble_train": None if self.ensemble_train is None else self.ensemble_train.to_dict(),
            "baselines": {**asdict(self.baselines), "mlp_widths": list(self.baselines.mlp_widths)},
            "sweeps": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self.sweeps).items()},
            "strategies": list(self.strategies),
            "activations": [str(a) for a in self.activations],
            "optimizers": list(self.optimizers),
            "seeds": list(self.seeds),
        }

    def dump(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))


def _build(cls, section: str, data, converter=None):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{section}: expected a mapping, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    extra = sorted(set(data) - known)
    if extra:
        raise ConfigError(f"{section}: unknown field(s) {extra}; allowed: {sorted(known)}")
    data = dict(data)
    if converter:
        data = converter(data)
    try:
        return cls(**data)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{section}: {e}") from e


def _net_converter(d):
    if "inception_blocks" in d:
        d["inception_blocks"] = tuple(InceptionSpec(**b) if isinstance(b, dict) else InceptionSpec(*b)
                                      for b in d["inception_blocks"])
    return d


def _tuple_fields(*names):
    def conv(d):
        for n in names:
            if n in d and d[n] is not None:
                d[n] = tuple(d[n])
        return d
    return conv


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    known = {f.name for f in fields(ExperimentConfig)}
    extra = sorted(set(raw) - known)
    if extra:
        raise ConfigError(f"unknown top-level field(s) {extra}; allowed: {sorted(known)}")
    if "schema_version" not in raw:
        raise ConfigError("schema_version is required")
    kw = {
        "channel": _build(ChannelConfig, "channel", raw.get("channel"), _tuple_fields("tx_power_db")),
        "selection": _build(SelectionConfig, "selection", raw.get("selection")),
        "dataset": _build(DatasetConfig, "dataset", raw.get("dataset")),
        "net": _build(NetworkSpec, "net", raw.get("net"), _net_converter),
        "train": _build(TrainConfig, "train", raw.get("train")),
        "ensemble": _build(EnsembleConfig, "ensemble", raw.get("ensemble"), _tuple_fields("weight_grid")),
        "ensemble_train": (None if raw.get("ensemble_train") is None
                           else _build(TrainConfig, "ensemble_train", raw["ensemble_train"])),
        "baselines": _build(BaselineConfig, "baselines", raw.get("baselines"), _tuple_fields("mlp_widths")),
        "sweeps": _build(SweepConfig, "sweeps", raw.get("sweeps")),
    }
    for name in ("strategies", "activations", "optimizers", "seeds"):
        if name in raw:
            if not isinstance(raw[name], (list, tuple)):
                raise ConfigError(f"{name}: expected a list")
            kw[name] = tuple(raw[name])
    kw["schema_version"] = raw["schema_version"]
    try:
        return ExperimentConfig(**kw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from e


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"{path}: YAML parse error{where}: {getattr(e, 'problem', e)}") from e
    try:
        return config_from_dict(raw)
    except ConfigError as e:
        raise ConfigError(f"{path}: {e}") from e
