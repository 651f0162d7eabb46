"""
Module config.py

This module contains the training configuration and the learning-rate
schedule derived from it.

"""

from dataclasses import asdict, dataclass, replace
from typing import Tuple

from itl_seg.error import ConfigError

SCHEMES = ("itl", "isolated", "mixed", "multi")
ABLATIONS = ("none", "pretrain_only", "model_loss_only")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 5
    rehearsal_batch_size: int = 5
    beta1: float = 0.9
    beta2: float = 0.999
    lr_init: float = 1e-3
    lr_decay: float = 0.95
    milestones: Tuple[int, ...] = (60, 80)
    gamma_percent: float = 5.0
    alpha: float = 0.5
    delta: float = 0.5
    seed: int = 0
    scheme: str = "itl"
    ablation: str = "none"
    val_fraction: float = 0.1
    threshold: float = 0.5
    device: str = "cpu"
    num_workers: int = 0

    def __post_init__(self):
        object.__setattr__(self, "milestones", tuple(int(m) for m in self.milestones))
        if self.epochs < 1:
            raise ConfigError(f"train.epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1 or self.rehearsal_batch_size < 1:
            raise ConfigError("train.batch_size and train.rehearsal_batch_size must be >= 1")
        if self.lr_init <= 0:
            raise ConfigError(f"train.lr_init must be > 0, got {self.lr_init}")
        if not 0 < self.lr_decay <= 1:
            raise ConfigError(f"train.lr_decay must be in (0, 1], got {self.lr_decay}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("train.beta1 and train.beta2 must be in [0, 1)")
        if self.gamma_percent < 0 or self.gamma_percent > 100:
            raise ConfigError(f"train.gamma_percent must be in [0, 100], got {self.gamma_percent}")
        if self.alpha < 0 or self.delta < 0:
            raise ConfigError("train.alpha and train.delta must be >= 0")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"Unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"Unknown ablation {self.ablation!r}; expected one of {ABLATIONS}")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError(f"train.val_fraction must be in [0, 1), got {self.val_fraction}")
        if not 0 < self.threshold < 1:
            raise ConfigError(f"train.threshold must be in (0, 1), got {self.threshold}")

    @property
    def betas(self) -> Tuple[float, float]:
        return (self.beta1, self.beta2)

    @property
    def use_model_loss(self) -> bool:
        return self.ablation != "pretrain_only"

    def with_overrides(self, **changes) -> "TrainConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["milestones"] = list(self.milestones)
        return d


def lr_at(epoch: int, config: TrainConfig) -> float:
    """Initial rate times lr_decay for every milestone already reached."""
    if not 0 <= epoch < config.epochs:
        raise ValueError(f"Epoch {epoch} outside [0, {config.epochs})")
    passed = sum(1 for m in config.milestones if epoch >= m)
    return config.lr_init * config.lr_decay ** passed
