"""Flat TOML experiment configuration shared by the CLI commands."""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, fields

from .backbone import BackboneConfig
from .exceptions import DataError
from .gt import GtConfig
from .losses import LossConfig
from .train import TrainSchedule

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


@dataclass
class ExperimentConfig:
    """Everything a training/eval run needs, from one flat key-value file."""

    variant: str = "S5"
    seed: int = 0
    # gt kernel
    sigma: float = 4.0
    radius: int = 15
    downsample: int = 4
    # network
    init_std: float = 0.01
    unit_count: int = 2
    width_mult: float = 1.0
    # losses
    alpha: float = 1.0
    gamma: float = 2.0
    # schedule
    adam_epochs: int = 10
    base_lr: float = 1e-5
    decay_factor: float = 0.1
    decay_every: int = 20
    total_epochs: int = 50
    batch_size: int = 16
    sgd_momentum: float = 0.9
    # data
    train_manifest: str = ""
    val_manifest: str = ""
    test_manifest: str = ""
    patches_per_image: int = 200
    patch_width: int = 192
    patch_height: int = 160
    clamp_counts: bool = False

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(raw) - set(known))
        if unknown:
            raise DataError(f"unknown config keys: {', '.join(unknown)}")
        kwargs = {}
        for key, value in raw.items():
            target = known[key].type
            if target == "int" and isinstance(value, bool):
                raise DataError(f"config key {key} must be an integer")
            if target == "float" and isinstance(value, (int, float)) and not isinstance(value, bool):
                value = float(value)
            kwargs[key] = value
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise DataError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    # sub-config views -------------------------------------------------

    def gt_config(self) -> GtConfig:
        return GtConfig(sigma=self.sigma, radius=self.radius, downsample=self.downsample)

    def backbone_config(self) -> BackboneConfig:
        return BackboneConfig(
            init_std=self.init_std, unit_count=self.unit_count, width_mult=self.width_mult
        )

    def loss_config(self) -> LossConfig:
        return LossConfig(alpha=self.alpha, gamma=self.gamma)

    def schedule(self, seed: int | None = None) -> TrainSchedule:
        return TrainSchedule(
            adam_epochs=self.adam_epochs,
            base_lr=self.base_lr,
            decay_factor=self.decay_factor,
            decay_every=self.decay_every,
            total_epochs=self.total_epochs,
            batch_size=self.batch_size,
            seed=self.seed if seed is None else seed,
            sgd_momentum=self.sgd_momentum,
        )

    def patch_size(self) -> tuple[int, int]:
        return (self.patch_width, self.patch_height)
