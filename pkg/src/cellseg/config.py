"""Run configuration: a versioned JSON schema with hard errors on unknown
keys (silent typos corrupt experiments)."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .errors import ConfigError
from .io_ctc import SPLIT_CONFIGS
from .schedule import SCHEMES

CONFIG_VERSION = 1


@dataclass
class LrConfig:
    kind: str = "cosine"  # constant | cosine | cosine_warm_restarts
    lr_max: float = 2e-4
    lr_min: float = 1e-6
    restart_epochs: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.kind not in ("constant", "cosine", "cosine_warm_restarts"):
            raise ConfigError(f"unknown lr kind {self.kind!r}")
        if self.kind == "cosine_warm_restarts" and not self.restart_epochs:
            raise ConfigError("cosine_warm_restarts requires restart_epochs")


@dataclass
class ModelConfig:
    norm: str = "group"
    down: str = "maxpool"
    up: str = "upconv"
    aspp: bool = False
    depth: int = 2
    base_channels: int = 8
    groups: int = 8


@dataclass
class MorphConfig:
    dilate_iters: int | None = None  # None: 2 for 2D data, 5 for 3D
    erode_iters: int = 2
    contact_distance: int = 2
    element: str = "square"


@dataclass
class PostConfig:
    min_area: int = 20
    max_hole: int = 20
    connectivity: int = 4


@dataclass
class RunConfig:
    seed: int = 0
    scheme: str = "Acc"
    data_config: str = "GT-only"
    epochs: int = 25
    draws_per_dataset: int = 20  # per epoch
    validation_period: int = 10  # in epochs; the final epoch always validates
    batch_size: int = 8
    crop_size: int | None = 48  # None: short side of each dataset's frames
    pad: int = 8
    class_weights: tuple[float, float, float] = (1.0, 10.0, 5.0)
    seq_quota: int | None = None  # Seq draws per dataset; None: total / n
    mix_weights: tuple[float, ...] | None = None
    crop_overrides: dict[str, int] = field(default_factory=dict)
    batch_overrides: dict[str, int] = field(default_factory=dict)
    lr: LrConfig = field(default_factory=LrConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    morph: MorphConfig = field(default_factory=MorphConfig)
    post: PostConfig = field(default_factory=PostConfig)

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if self.data_config not in SPLIT_CONFIGS:
            raise ConfigError(f"unknown data config {self.data_config!r}")
        for name in ("epochs", "draws_per_dataset", "validation_period", "batch_size"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if len(self.class_weights) != 3:
            raise ConfigError("class_weights needs exactly 3 entries")


_SECTIONS = {"lr": LrConfig, "model": ModelConfig, "morph": MorphConfig, "post": PostConfig}


def _build(cls, data: dict, where: str):
    allowed = set(cls.__dataclass_fields__)
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")
    coerced = {}
    for key, value in data.items():
        if isinstance(value, list):
            value = tuple(value)
        coerced[key] = value
    return cls(**coerced)


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    data = dict(data)
    version = data.pop("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {version} (expected {CONFIG_VERSION})")
    sections = {}
    for name, cls in _SECTIONS.items():
        if name in data:
            sections[name] = _build(cls, data.pop(name), name)
    cfg = _build(RunConfig, data, "config")
    return replace(cfg, **sections)


def load_config(path: Path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return config_from_dict(data)


def config_to_dict(cfg: RunConfig) -> dict:
    data = asdict(cfg)
    data["version"] = CONFIG_VERSION
    return data


def save_config(cfg: RunConfig, path: Path) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n")
