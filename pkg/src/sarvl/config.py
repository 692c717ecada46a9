"""Configuration objects for the model, the training run, and the staged schedule."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields

from .errors import ConfigurationError
from .objectives import LossWeights, Temperature

SEED_ENV_VAR = "SKLP_SEED"
DEFAULT_SEED = 0


@dataclass(frozen=True)
class ModelConfig:
    """Static shape of the dual-tower model.

    `embed_dim` is the shared embedding width of both towers; the three
    special token ids must be pairwise distinct and inside the vocabulary.
    """

    embed_dim: int = 64
    num_layers: int = 2
    num_heads: int = 4
    patch_size: int = 16
    max_patches: int = 64
    vocab_size: int = 512
    max_text_len: int = 64
    pad_token_id: int = 0
    cls_token_id: int = 1
    mask_token_id: int = 2

    def __post_init__(self):
        for name in ("embed_dim", "num_layers", "num_heads", "patch_size",
                     "max_patches", "vocab_size", "max_text_len"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if self.embed_dim % self.num_heads != 0:
            raise ConfigurationError(
                f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}")
        specials = (self.mask_token_id, self.pad_token_id, self.cls_token_id)
        if len(set(specials)) != 3:
            raise ConfigurationError(f"special token ids must be pairwise distinct, got {specials}")
        for tid in specials:
            if not 0 <= tid < self.vocab_size:
                raise ConfigurationError(f"special token id {tid} outside vocab of {self.vocab_size}")


@dataclass(frozen=True)
class StageSchedule:
    """Epoch counts for the three training stages of the denoising loop."""

    epochs_stage1: int = 4
    epochs_stage2: int = 4
    epochs_stage3: int = 4

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ConfigurationError(f"{f.name} must be nonnegative")
        if self.total == 0:
            raise ConfigurationError("stage schedule must cover at least one epoch")

    @property
    def total(self) -> int:
        return self.epochs_stage1 + self.epochs_stage2 + self.epochs_stage3


@dataclass
class RunConfig:
    """Training-run hyperparameters, desk-scale defaults.

    Full-scale values (batch 32, queue 20000, warmup 3000, image side 224)
    remain accepted; the defaults below are scaled down so the whole stack
    runs in seconds on a laptop CPU.
    """

    model: ModelConfig = field(default_factory=ModelConfig)
    batch_size: int = 8
    queue_capacity: int = 256
    lr: float = 3e-4
    warmup_steps: int = 50
    warmup_start_lr: float = 1e-6
    weight_decay: float = 0.05
    min_lr: float = 1e-6
    epoch_decay: float = 0.9
    epochs: int = 30
    schedule: StageSchedule = field(default_factory=StageSchedule)
    seed: int = DEFAULT_SEED
    image_side: int = 64
    mask_rate: float = 0.15
    temperature: Temperature = field(default_factory=Temperature)
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        for name in ("batch_size", "queue_capacity", "epochs", "image_side"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        for name in ("lr", "warmup_start_lr", "min_lr"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.warmup_steps < 0:
            raise ConfigurationError("warmup_steps must be nonnegative")
        if not 0.0 < self.mask_rate <= 1.0:
            raise ConfigurationError("mask_rate must lie in (0, 1]")
        if self.image_side % self.model.patch_size != 0:
            raise ConfigurationError(
                f"image_side {self.image_side} not a multiple of patch_size {self.model.patch_size}")


def default_seed() -> int:
    """Seed fallback: the SKLP_SEED environment variable, else 0."""
    raw = os.environ.get(SEED_ENV_VAR)
    if raw is None:
        return DEFAULT_SEED
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigurationError(f"{SEED_ENV_VAR} must be an integer, got {raw!r}") from exc
