"""Declarative run configuration: one YAML file with a section per subsystem.

Unknown keys are rejected with the offending field named, so typos fail
fast with exit code 2 at the CLI.  Flags override individual fields after
the file is parsed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError
from .synthetic import SynthConfig
from .util import dataclass_from_dict

MODES = ("hierarchical", "ar")


@dataclass
class ProviderConfig:
    kind: str = "hash"
    d_sem: int = 768
    seed: int = 0
    position_mixing: bool = False
    store: str | None = None
    train_provider: bool = False

    def validate(self) -> "ProviderConfig":
        if self.kind not in ("hash", "precomputed", "trainable"):
            raise ConfigError(f"provider.kind must be hash|precomputed|trainable, "
                              f"got {self.kind!r}")
        if self.d_sem < 1:
            raise ConfigError(f"provider.d_sem must be positive, got {self.d_sem}")
        if self.kind == "precomputed" and not self.store:
            raise ConfigError("provider.store is required when kind is precomputed")
        if self.train_provider and self.kind != "trainable":
            raise ConfigError("provider.train_provider requires kind: trainable")
        return self


@dataclass
class ModelConfig:
    d_style: int = 128
    d_ctx: int = 128
    conv_channels: tuple[int, ...] = (32, 32, 64, 64, 128, 128)
    style_tokens: int = 10
    token_heads: int = 4
    token_attention_gain: float = 6.0
    encoder_layers: int = 2
    decoder_layers: int = 2
    attention_heads: int = 2
    d_ff: int = 256
    variance_hidden: int = 64
    variance_bins: int = 64
    pitch_range: tuple[float, float] = (0.0, 600.0)
    L: int = 2
    L_extractor: int | None = None

    def validate(self) -> "ModelConfig":
        for name in ("d_style", "d_ctx", "style_tokens", "token_heads",
                     "encoder_layers", "decoder_layers", "attention_heads",
                     "d_ff", "variance_hidden", "variance_bins"):
            if getattr(self, name) < 1:
                raise ConfigError(f"model.{name} must be positive")
        if self.d_style % self.token_heads != 0:
            raise ConfigError(f"model.token_heads ({self.token_heads}) must divide "
                              f"d_style ({self.d_style})")
        if self.d_style % self.attention_heads != 0:
            raise ConfigError(f"model.attention_heads ({self.attention_heads}) must "
                              f"divide d_style ({self.d_style})")
        if self.d_ctx % 2 != 0:
            raise ConfigError(f"model.d_ctx must be even, got {self.d_ctx}")
        if self.L < 0:
            raise ConfigError(f"model.L must be >= 0, got {self.L}")
        if self.L_extractor is not None and self.L_extractor < 0:
            raise ConfigError(f"model.L_extractor must be >= 0, got {self.L_extractor}")
        if len(self.conv_channels) < 1:
            raise ConfigError("model.conv_channels must not be empty")
        if self.pitch_range[0] >= self.pitch_range[1]:
            raise ConfigError("model.pitch_range must be increasing")
        return self

    @property
    def extractor_radius(self) -> int:
        return self.L if self.L_extractor is None else self.L_extractor


@dataclass
class TrainConfig:
    batch_size: int = 8
    stage1_per_level: int = 600
    stage2_steps: int = 200
    stage3_steps: int = 200
    total_steps: int | None = None
    beta1: float = 0.9
    beta2: float = 0.98
    epsilon: float = 1e-9
    warmup_steps: int = 50
    base_lr: float = 2e-3
    stage3_lr_scale: float = 0.3
    style_loss_weight: float = 1.0
    seed: int = 7
    mode: str = "hierarchical"
    mel_loss: str = "mae"
    include_inactive_levels: bool = True
    checkpoint_every: int | None = None

    @property
    def stage1_steps(self) -> int:
        return 3 * self.stage1_per_level

    def validate(self) -> "TrainConfig":
        for name in ("batch_size", "stage1_per_level", "stage2_steps",
                     "stage3_steps", "warmup_steps"):
            if getattr(self, name) < 1:
                raise ConfigError(f"train.{name} must be positive")
        derived = self.stage1_steps + self.stage2_steps + self.stage3_steps
        if self.total_steps is not None and self.total_steps != derived:
            raise ConfigError(f"train.total_steps={self.total_steps} does not equal "
                              f"3*stage1_per_level + stage2 + stage3 = {derived}")
        if self.mode not in MODES:
            raise ConfigError(f"train.mode must be one of {MODES}, got {self.mode!r}")
        if self.mel_loss not in ("mae", "mse"):
            raise ConfigError(f"train.mel_loss must be mae|mse, got {self.mel_loss!r}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("train.beta1/beta2 must lie in [0, 1)")
        if self.base_lr <= 0 or self.stage3_lr_scale <= 0:
            raise ConfigError("train.base_lr and stage3_lr_scale must be positive")
        if self.style_loss_weight < 0:
            raise ConfigError("train.style_loss_weight must be >= 0")
        return self


@dataclass
class CorpusSection:
    manifest: str | None = None
    synth: SynthConfig | None = None
    holdout_per_document: int = 2

    def validate(self) -> "CorpusSection":
        if self.holdout_per_document < 0:
            raise ConfigError("corpus.holdout_per_document must be >= 0")
        return self


@dataclass
class RunConfig:
    corpus: CorpusSection = field(default_factory=CorpusSection)
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    mode: str = "hierarchical"
    seed: int = 7
    output_root: str = "runs/out"

    def validate(self) -> "RunConfig":
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        self.train.mode = self.mode
        self.corpus.validate()
        self.provider.validate()
        self.model.validate()
        self.train.validate()
        return self


def run_config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config file must contain a mapping at the top level")
    known = {"corpus", "provider", "model", "train", "mode", "seed", "output_root"}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config section(s)/field(s): {', '.join(unknown)}")
    corpus_data = dict(data.get("corpus", {}))
    synth = corpus_data.pop("synth", None)
    corpus = dataclass_from_dict(CorpusSection, {**corpus_data, "synth": None},
                                 context="corpus")
    if synth is not None:
        corpus.synth = SynthConfig.from_dict(synth)
    cfg = RunConfig(
        corpus=corpus,
        provider=dataclass_from_dict(ProviderConfig, data.get("provider", {}),
                                     context="provider"),
        model=dataclass_from_dict(ModelConfig, data.get("model", {}), context="model"),
        train=dataclass_from_dict(TrainConfig, data.get("train", {}), context="train"),
        mode=data.get("mode", "hierarchical"),
        seed=int(data.get("seed", 7)),
        output_root=str(data.get("output_root", "runs/out")),
    )
    return cfg.validate()


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return run_config_from_dict(data or {})
