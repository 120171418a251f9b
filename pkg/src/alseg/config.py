"""Experiment configuration.

Every knob of a run lives in one nested dataclass tree that round-trips
through JSON. Unknown keys are rejected so that typos in config files fail
loudly instead of silently falling back to defaults.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

IGNORE_INDEX = 255
MODES = ("active", "ssl", "supervised")


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


class DataError(RuntimeError):
    """Dataset missing, unreadable or inconsistent with the config."""


class NumericalError(ArithmeticError):
    """Non-finite values encountered during training or inference."""


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


@dataclass
class DataParams:
    n_train: int = 120
    n_val: int = 30
    height: int = 64
    width: int = 64
    num_classes: int = 6
    # mean number of shapes drawn per foreground class; 0 disables shapes
    shape_density: float = 1.5
    color_noise: float = 0.15
    # RGB distance between the two deliberately confusable class colors
    confusable_gap: float = 0.12
    # std of a per-shape offset added to its class colour
    instance_jitter: float = 0.05
    # per-image, per-channel gain drawn from [1 - illumination, 1 + illumination]
    illumination: float = 0.5
    min_shape_frac: float = 0.12
    max_shape_frac: float = 0.35

    def __post_init__(self) -> None:
        _check(self.height >= 32 and self.width >= 32, "height and width must be >= 32")
        _check(2 <= self.num_classes <= 32, "num_classes must be in [2, 32]")
        _check(self.n_train >= 1 and self.n_val >= 1, "n_train and n_val must be >= 1")
        _check(self.shape_density >= 0, "shape_density must be >= 0")
        _check(self.color_noise >= 0, "color_noise must be >= 0")
        _check(self.instance_jitter >= 0, "instance_jitter must be >= 0")
        _check(0 <= self.illumination < 1, "illumination must be in [0, 1)")
        _check(0 < self.min_shape_frac <= self.max_shape_frac <= 1, "bad shape size range")


@dataclass
class ModelConfig:
    channels: tuple[int, int, int] = (16, 32, 48)
    decoder_channels: int = 32
    embed_dim: int = 16
    dropout: float = 0.1

    def __post_init__(self) -> None:
        self.channels = tuple(int(c) for c in self.channels)
        _check(len(self.channels) == 3, "channels must list exactly 3 encoder widths")
        _check(all(c >= 1 for c in self.channels), "channel widths must be positive")
        _check(self.decoder_channels >= 1, "decoder_channels must be positive")
        _check(self.embed_dim >= 2, "embed_dim must be >= 2")
        _check(0 <= self.dropout < 1, "dropout must be in [0, 1)")


@dataclass
class OptimConfig:
    lr: float = 1e-2
    momentum: float = 0.9
    weight_decay: float = 1e-4
    poly_power: float = 0.9

    def __post_init__(self) -> None:
        _check(self.lr > 0, "lr must be positive")
        _check(0 <= self.momentum < 1, "momentum must be in [0, 1)")
        _check(self.weight_decay >= 0, "weight_decay must be >= 0")
        _check(self.poly_power > 0, "poly_power must be positive")


@dataclass
class RecoConfig:
    temperature: float = 0.5
    delta_s: float = 0.97
    num_queries: int = 32
    num_negatives: int = 64
    weight: float = 1.0

    def __post_init__(self) -> None:
        _check(self.temperature > 0, "temperature must be positive")
        _check(0 < self.delta_s < 1, "delta_s must be in (0, 1)")
        _check(self.num_queries >= 1, "num_queries must be >= 1")
        _check(self.num_negatives >= 1, "num_negatives must be >= 1")
        _check(self.weight >= 0, "weight must be >= 0")


@dataclass
class ExperimentConfig:
    name: str = "default"
    seed: int = 0
    mode: str = "active"
    data_dir: str = "data/default"
    out_dir: str = "runs"
    data: DataParams = field(default_factory=DataParams)
    model: ModelConfig = field(default_factory=ModelConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    reco: RecoConfig = field(default_factory=RecoConfig)
    labeled_fraction: float = 0.10
    epochs_per_cycle: int = 10
    final_epoch_multiplier: float = 1.5
    iters_per_epoch: int = 20
    batch_labeled: int = 2
    batch_unlabeled: int = 4
    pseudo_threshold: float = 0.7
    region_size: int = 8
    budget_per_image: int = 4
    al_cycles: int = 2
    ssl_retrain_count: int = 2
    reinit_each_cycle: bool = False
    save_pool_snapshots: bool = True
    eval_batch: int = 16

    def __post_init__(self) -> None:
        _check(self.mode in MODES, f"mode must be one of {MODES}, got {self.mode!r}")
        _check(bool(self.name), "name must be non-empty")
        # 1.0 is allowed so a fully supervised reference can be trained
        _check(0 < self.labeled_fraction <= 1, "labeled_fraction must be in (0, 1]")
        _check(self.epochs_per_cycle >= 1, "epochs_per_cycle must be >= 1")
        _check(self.final_epoch_multiplier > 0, "final_epoch_multiplier must be positive")
        _check(self.iters_per_epoch >= 1, "iters_per_epoch must be >= 1")
        _check(self.batch_labeled >= 1, "batch_labeled must be >= 1")
        _check(self.batch_unlabeled >= 0, "batch_unlabeled must be >= 0")
        _check(0 < self.pseudo_threshold < 1, "pseudo_threshold must be in (0, 1)")
        _check(self.region_size >= 1, "region_size must be >= 1")
        _check(
            self.data.height % self.region_size == 0 and self.data.width % self.region_size == 0,
            "image height and width must be divisible by region_size",
        )
        _check(self.budget_per_image >= 1, "budget_per_image must be >= 1")
        _check(self.al_cycles >= 0, "al_cycles must be >= 0")
        _check(self.ssl_retrain_count >= 0, "ssl_retrain_count must be >= 0")
        _check(self.eval_batch >= 1, "eval_batch must be >= 1")

    # -- serialization -------------------------------------------------

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["model"]["channels"] = list(self.model.channels)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def content_hash(self) -> str:
        """sha256 over canonical JSON; independent of key order and platform."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ExperimentConfig":
        return _build(cls, d, "")

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from e
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(raw)

    def replace(self, **changes: Any) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def _build(cls, d: dict[str, Any], prefix: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{prefix or 'config'}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - set(fields))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(prefix + k for k in unknown)}")
    kwargs = {}
    for key, value in d.items():
        sub = _NESTED.get((cls, key))
        if sub is not None:
            kwargs[key] = _build(sub, value, f"{prefix}{key}.")
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(str(e)) from e


_NESTED = {
    (ExperimentConfig, "data"): DataParams,
    (ExperimentConfig, "model"): ModelConfig,
    (ExperimentConfig, "optim"): OptimConfig,
    (ExperimentConfig, "reco"): RecoConfig,
}
