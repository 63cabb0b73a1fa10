"""Experiment configuration shared by the model, the trainer and the CLI."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

ABLATIONS = ("none", "no-eafa", "no-uncertainty")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    image_size: int = 64
    spacing_mm: float = 1.0
    channels: tuple[int, int, int] = (16, 32, 32)
    decoder_channels: int = 32
    token_dim: int = 64
    heads: int = 4
    depth: int = 3
    d_k: int = 64
    ffn_mult: int = 4
    num_classes: int = 2
    lambda_seg: float = 1.0
    lambda_qua: float = 1.0
    lambda_unc: float = 0.1
    lr: float = 0.03
    momentum: float = 0.9
    lr_schedule: str = "step"
    lr_decay: float = 0.2
    augment: bool = True
    epochs: int = 30
    batch_size: int = 8
    folds: int = 5
    seed: int = 0
    ablation: str = "none"

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        self.validate()

    @property
    def grid(self) -> int:
        """Side of the bottleneck feature map, P = H / 8."""
        return self.image_size // 8

    @property
    def n_feature_tokens(self) -> int:
        return 2 * self.channels[-1]

    @property
    def use_eafa(self) -> bool:
        return self.ablation != "no-eafa"

    @property
    def use_uncertainty(self) -> bool:
        return self.ablation != "no-uncertainty"

    def validate(self) -> None:
        if self.image_size < 8 or self.image_size % 8:
            raise ConfigError(f"image_size must be a positive multiple of 8, got {self.image_size}")
        if self.spacing_mm <= 0:
            raise ConfigError("spacing_mm must be positive")
        if len(self.channels) != 3 or min(self.channels) < 1:
            raise ConfigError(f"channels must be three positive widths, got {self.channels}")
        if self.token_dim != self.grid ** 2:
            raise ConfigError(
                f"token_dim {self.token_dim} must equal (image_size/8)^2 = {self.grid ** 2}")
        if self.heads < 1 or self.token_dim % self.heads:
            raise ConfigError(f"token_dim {self.token_dim} not divisible by heads {self.heads}")
        if self.depth < 1 or self.d_k < 1:
            raise ConfigError("depth and d_k must be positive")
        if min(self.lambda_seg, self.lambda_qua, self.lambda_unc) < 0:
            raise ConfigError("loss weights must be non-negative")
        if self.folds < 2:
            raise ConfigError(f"folds must be >= 2, got {self.folds}")
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ConfigError("epochs >= 0, batch_size >= 1 and lr > 0 required")
        if self.lr_schedule not in ("constant", "step") or not 0 < self.lr_decay <= 1:
            raise ConfigError("lr_schedule must be 'constant' or 'step' with 0 < lr_decay <= 1")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")

    def replace(self, **changes) -> "ExperimentConfig":
        return ExperimentConfig(**{**asdict(self), **changes})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(str(e)) from e

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        d = json.loads(Path(path).read_text())
        if not isinstance(d, dict):
            raise ConfigError("config file must hold a flat JSON object")
        return cls.from_dict(d)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))
