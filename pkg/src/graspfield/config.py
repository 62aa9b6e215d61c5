"""Run configuration: one flat record with documented defaults.

Files hold ``key = value`` lines (``#`` starts a comment); command-line
``--key value`` pairs override them. Unknown keys are rejected.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields

from .errors import ConfigError


@dataclass
class TrainConfig:
    # schedule
    epochs: int = 300
    iterations_per_epoch: int = 1000
    learning_rate: float = 1e-3
    decay_epoch: int = 200
    decay_factor: float = 0.1
    rays_per_image: int = 1024
    samples_per_ray: int = 64
    importance_samples: int = 0  # > 0 turns on a second, weight-guided sampling pass
    object_ray_ratio_final: float = 0.5
    ramp_fraction: float = 0.1
    seed: int = 0
    ablation: str = "M5"
    # model
    code_seed: int = 0
    image_channels: int = 32
    encoder_widths: str = "16,32,32"
    cnn_widths: str = "32,64,64"
    hidden: int = 128
    density_scale: float = 500.0
    density_shift: float = 6.0
    # volume
    voxel_size: float = 0.005
    margin: float = 0.25
    perturb_sigma: float = 0.005
    rotate_max: float = math.pi / 10
    input_views: str = ""  # comma-separated view ids usable as input; empty = all
    holdout_views: str = ""  # view ids never used as input or supervision
    log_every: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("epochs", "iterations_per_epoch", "rays_per_image", "samples_per_ray", "image_channels",
                     "hidden", "log_every"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("object_ray_ratio_final", "ramp_fraction", "decay_factor"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.learning_rate <= 0 or self.voxel_size <= 0 or self.margin < 0 or self.perturb_sigma < 0:
            raise ConfigError("learning_rate and voxel_size must be positive, margin and perturb_sigma non-negative")
        if self.importance_samples < 0:
            raise ConfigError("importance_samples must be non-negative")
        if self.ablation.upper() not in ("M2", "M3", "M4", "M5"):
            raise ConfigError(f"unknown ablation {self.ablation!r}")
        self.ablation = self.ablation.upper()
        int_list(self.encoder_widths, 3, "encoder_widths")
        int_list(self.cnn_widths, 3, "cnn_widths")
        for name in ("input_views", "holdout_views"):
            if getattr(self, name):
                int_list(getattr(self, name), None, name)

    @property
    def total_iterations(self) -> int:
        return self.epochs * self.iterations_per_epoch

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        return cls(**coerce(cls, values))


def int_list(text: str, length, name: str) -> tuple:
    try:
        values = tuple(int(v) for v in str(text).split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"{name} must be comma-separated integers, got {text!r}") from None
    if length is not None and len(values) != length:
        raise ConfigError(f"{name} needs {length} integers, got {text!r}")
    return values


def _convert(kind, key: str, raw):
    if not isinstance(raw, str):
        return raw
    try:
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
        if kind in (bool, "bool"):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def coerce(record_type, values: dict) -> dict:
    """Convert string values to the field types of ``record_type``; reject unknown keys."""
    known = {f.name: f.type for f in fields(record_type)}
    out = {}
    for key, raw in values.items():
        name = key.replace("-", "_")
        if name not in known:
            raise ConfigError(f"unknown configuration key {key!r}")
        out[name] = _convert(known[name], key, raw)
    return out


def parse_config_text(text: str) -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        values[key] = value
    return values


def format_config(values: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in values.items())
