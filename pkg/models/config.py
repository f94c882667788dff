"""Configuration models for solver, quantizer and training runs."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Any

from utils.errors import ConfigError

QUANTIZER_KINDS = ("nearest", "optvq")
DATASETS = ("mnist", "synthetic")


@dataclass(frozen=True)
class SinkhornConfig:
    epsilon: float = 10.0
    iterations: int = 5
    normalize: bool = True
    # Column targets l/n instead of 1, so both marginals carry the same total mass.
    balanced: bool = False

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}.")
        if self.iterations < 1:
            raise ConfigError(f"Sinkhorn iterations must be >= 1, got {self.iterations}.")


@dataclass(frozen=True)
class QuantizerConfig:
    kind: str = "optvq"
    sinkhorn: SinkhornConfig = field(default_factory=SinkhornConfig)
    heads: int = 4
    beta: float = 0.25

    def __post_init__(self) -> None:
        if self.kind not in QUANTIZER_KINDS:
            raise ConfigError(f"Unknown quantizer '{self.kind}', expected one of {QUANTIZER_KINDS}.")
        if self.heads < 1:
            raise ConfigError(f"heads must be >= 1, got {self.heads}.")
        if self.beta < 0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}.")


@dataclass(frozen=True)
class TrainConfig:
    quantizer: QuantizerConfig = field(default_factory=QuantizerConfig)
    codebook_size: int = 1024
    latent_dim: int = 8
    patch_size: int = 8
    hidden_dim: int = 128
    batch_size: int = 64
    epochs: int = 5
    lr: float = 1e-3
    seed: int = 0
    log_every: int = 10

    def __post_init__(self) -> None:
        for name in ("codebook_size", "latent_dim", "patch_size", "hidden_dim", "batch_size", "epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}.")
        if self.latent_dim % self.quantizer.heads:
            raise ConfigError(
                f"latent_dim={self.latent_dim} is not divisible by heads={self.quantizer.heads}."
            )
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}.")

    def check_image_side(self, side: int) -> None:
        if side % self.patch_size:
            raise ConfigError(f"Image side {side} is not divisible by patch_size={self.patch_size}.")


@dataclass
class RunConfig:
    """Flat key=value configuration shared by every CLI subcommand."""

    quantizer: str = "optvq"
    codebook_size: int = 1024
    latent_dim: int = 8
    heads: int = 1
    epsilon: float = 10.0
    sinkhorn_iters: int = 5
    beta: float = 0.25
    batch_size: int = 64
    epochs: int = 5
    lr: float = 1e-3
    seed: int = 0
    dataset: str = "mnist"
    out_dir: str = "runs/default"
    balanced_marginals: bool = False
    normalize_cost: bool = True
    patch_size: int = 8
    hidden_dim: int = 128
    data_dir: str = "data"
    train_subset: int = 10000
    val_subset: int = 1000
    download: bool = False
    log_every: int = 10

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def keys(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunConfig":
        unknown = sorted(set(data) - set(cls.keys()))
        if unknown:
            raise ConfigError(f"Unknown config keys: {', '.join(unknown)}.")
        config = cls(**data)
        if config.dataset not in DATASETS:
            raise ConfigError(f"Unknown dataset '{config.dataset}', expected one of {DATASETS}.")
        return config

    def sinkhorn_config(self) -> SinkhornConfig:
        return SinkhornConfig(
            epsilon=self.epsilon,
            iterations=self.sinkhorn_iters,
            normalize=self.normalize_cost,
            balanced=self.balanced_marginals,
        )

    def quantizer_config(self) -> QuantizerConfig:
        return QuantizerConfig(
            kind=self.quantizer,
            sinkhorn=self.sinkhorn_config(),
            heads=self.heads,
            beta=self.beta,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            quantizer=self.quantizer_config(),
            codebook_size=self.codebook_size,
            latent_dim=self.latent_dim,
            patch_size=self.patch_size,
            hidden_dim=self.hidden_dim,
            batch_size=self.batch_size,
            epochs=self.epochs,
            lr=self.lr,
            seed=self.seed,
            log_every=self.log_every,
        )


@dataclass
class StepMetrics:
    step: int
    l1: float
    l2: float
    commit: float
    total: float
    usage_frac: float
    perplexity: float


@dataclass
class TrainStatus:
    current_step: int
    total_steps: int
    eta_seconds: float
    usage_percent: float
    message: str
