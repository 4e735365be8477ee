"""Versioned JSON run configuration shared by the CLI commands.

Every section is a dataclass; unknown keys anywhere are rejected, missing
keys take the documented defaults, and the fully resolved configuration is
written next to each run's outputs.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, List, Optional, Type, TypeVar, get_args, get_origin, get_type_hints

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass
class ModelSection:
    family: str = "resnet20"
    width: int = 8
    input_size: int = 32
    classes: Optional[int] = None      # None: number of dataset classes


@dataclass
class SyntheticSection:
    classes: int = 4
    per_class: int = 10
    size: int = 32
    seed: int = 0
    objects_per_class: int = 2


@dataclass
class DatasetSection:
    path: Optional[str] = None
    size: Optional[int] = None         # None: model input size
    synthetic: Optional[SyntheticSection] = None
    split: str = "sequential"          # sequential | none
    train_fraction: float = 0.7


@dataclass
class AugmentSection:
    shift_fraction: float = 0.1
    flip_ud: float = 0.5
    flip_lr: float = 0.5


@dataclass
class TrainSection:
    learning_rate: float = 0.001
    epochs: int = 200
    batch_size: int = 32
    augment: Optional[AugmentSection] = field(default_factory=AugmentSection)
    pixel_mean: Optional[float] = None
    target_train_accuracy: Optional[float] = None


@dataclass
class SearchSection:
    widths: List[int] = field(default_factory=lambda: [8, 16, 32, 64])
    k: int = 5
    epochs: int = 50


@dataclass
class TransferSection:
    checkpoint: Optional[str] = None
    layer: Optional[str] = None
    features_dir: Optional[str] = None
    raw_pixels: bool = False
    spc: List[int] = field(default_factory=lambda: [1, 5, 10, 20, 30, 40, 50])
    runs: int = 10
    C: float = 1.0
    standardize: bool = False
    svm_loss: str = "hinge"             # hinge | squared_hinge


@dataclass
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    output_dir: Optional[str] = None
    seed: int = 0
    model: ModelSection = field(default_factory=ModelSection)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    train: TrainSection = field(default_factory=TrainSection)
    search: SearchSection = field(default_factory=SearchSection)
    transfer: TransferSection = field(default_factory=TransferSection)


T = TypeVar("T")


def _coerce(tp, value, where: str):
    origin = get_origin(tp)
    if origin is Optional or (origin is not None and type(None) in get_args(tp)):
        if value is None:
            return None
        inner = [a for a in get_args(tp) if a is not type(None)][0]
        return _coerce(inner, value, where)
    if dataclasses.is_dataclass(tp):
        return _from_dict(tp, value, where)
    if origin in (list, List):
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {type(value).__name__}")
        (inner,) = get_args(tp)
        return [_coerce(inner, v, f"{where}[{i}]") for i, v in enumerate(value)]
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    return value


def _from_dict(cls: Type[T], data: Any, where: str) -> T:
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {k: _coerce(hints[k], v, f"{where}.{k}" if where else k) for k, v in data.items()}
    return cls(**kwargs)


def parse_config(data: dict) -> RunConfig:
    cfg = _from_dict(RunConfig, data, "")
    if cfg.schema_version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version {cfg.schema_version} is not supported (expected {SCHEMA_VERSION})")
    if cfg.dataset.split not in ("sequential", "none"):
        raise ConfigError(f"dataset.split must be 'sequential' or 'none', got {cfg.dataset.split!r}")
    if cfg.transfer.svm_loss not in ("hinge", "squared_hinge"):
        raise ConfigError(f"transfer.svm_loss must be 'hinge' or 'squared_hinge', got {cfg.transfer.svm_loss!r}")
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(data)


def config_to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def dump_config(cfg: RunConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n"
