"""Configuration dataclasses, presets and YAML round-tripping.

Two presets ship: ``full`` (ViT-B sized, 256/128 px crops, never trained
here) and ``desk`` (small enough to train on one CPU core).
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


@dataclass
class EncoderConfig:
    depth: int = 12
    dim: int = 768
    heads: int = 12
    patch_size_px: int = 16
    template_size_px: int = 128
    search_size_px: int = 256
    relevance_layers: list[int] = field(default_factory=lambda: [4, 7, 10])
    keep_ratios: list[float] = field(default_factory=lambda: [0.9, 0.8, 0.7])
    mlp_ratio: int = 4
    ranking_hidden: list[int] = field(default_factory=lambda: [384, 192])
    filter_blocks: int = 3
    head_channels: list[int] = field(default_factory=lambda: [256, 128])
    renormalize_masked: bool = False

    def validate(self) -> None:
        if self.dim % self.heads:
            raise ConfigError(f"heads ({self.heads}) must divide dim ({self.dim})")
        s = self.patch_size_px
        if self.template_size_px % s or self.search_size_px % s:
            raise ConfigError("template and search sizes must be multiples of the patch size")
        if len(self.relevance_layers) != len(self.keep_ratios):
            raise ConfigError("relevance_layers and keep_ratios must have equal length")
        if any(not 1 <= l <= self.depth for l in self.relevance_layers):
            raise ConfigError(f"relevance layers {self.relevance_layers} outside [1, {self.depth}]")
        if list(self.relevance_layers) != sorted(set(self.relevance_layers)):
            raise ConfigError("relevance layers must be strictly increasing")
        if any(not 0.0 < q <= 1.0 for q in self.keep_ratios):
            raise ConfigError("keep ratios must lie in (0, 1]")
        if len(self.head_channels) != 2:
            raise ConfigError("head_channels lists the two hidden widths of each 3-layer branch")

    @property
    def n_template(self) -> int:
        return (self.template_size_px // self.patch_size_px) ** 2

    @property
    def n_search(self) -> int:
        return (self.search_size_px // self.patch_size_px) ** 2

    @property
    def grid(self) -> int:
        return self.search_size_px // self.patch_size_px

    @classmethod
    def full(cls) -> "EncoderConfig":
        return cls()

    @classmethod
    def desk(cls) -> "EncoderConfig":
        return cls(depth=6, dim=64, heads=4, patch_size_px=8, template_size_px=32, search_size_px=64,
                   relevance_layers=[2, 4, 5], ranking_hidden=[32, 16], head_channels=[32, 16])


@dataclass
class CropConfig:
    search_area_factor: float = 4.0
    template_area_factor: float = 2.0
    # training-time jitter of the search crop around the ground truth
    center_jitter_frac: float = 0.25
    scale_jitter_log: float = 0.15


@dataclass
class MemoryConfig:
    capacity_templates: int = 3  # N_max = capacity_templates * N_z tokens, anchor included
    update_interval_frames: int = 5
    interval_doubling_every_frames: int = 100
    interval_doubling_until_frame: int = 500
    terminal_interval_frames: int = 160


@dataclass
class LossConfig:
    w_score: float = 1.0
    w_iou: float = 2.0
    w_l1: float = 5.0
    w_ratio: float = 1.0
    focal_alpha: float = 2.0
    focal_beta: float = 4.0
    gaussian_min_overlap: float = 0.7


@dataclass
class TrainConfig:
    lr_fast: float = 4e-4       # ranking MLPs, token filter ranker, decoder head
    lr_slow: float = 4e-5       # everything else
    weight_decay: float = 1e-4
    betas: list[float] = field(default_factory=lambda: [0.9, 0.999])
    stage1_templates: int = 3
    stage2_templates: int = 7
    stage1_steps: int = 2000
    stage2_steps: int = 300
    lr_drop_at: float = 0.8        # fraction of stage 1 after which the rate drops
    lr_drop_factor: float = 0.1
    stage2_lr_scale: float = 0.1   # stage 2 fine-tunes at this multiple of the base rates
    batch_size: int = 8
    tau_start: float = 1.0
    tau_end: float = 0.1
    template_window_frames: int = 50
    grad_clip: float = 1.0
    seed: int = 0


@dataclass
class Config:
    profile: str = "full"
    model: EncoderConfig = field(default_factory=EncoderConfig)
    crop: CropConfig = field(default_factory=CropConfig)
    memory: MemoryConfig = field(default_factory=MemoryConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> "Config":
        self.model.validate()
        if self.crop.search_area_factor < 1 or self.crop.template_area_factor < 1:
            raise ConfigError("area factors must be >= 1")
        if self.memory.capacity_templates < 1:
            raise ConfigError("memory must hold at least the anchor template")
        if self.memory.update_interval_frames <= 0 or self.memory.terminal_interval_frames <= 0:
            raise ConfigError("update intervals must be positive")
        if self.train.tau_end <= 0 or self.train.tau_start <= 0:
            raise ConfigError("Gumbel temperature must be positive")
        t = self.train
        if not 0.0 <= t.lr_drop_at <= 1.0:
            raise ConfigError("lr_drop_at is a fraction of the stage and must lie in [0, 1]")
        if t.lr_drop_factor <= 0 or t.stage2_lr_scale <= 0:
            raise ConfigError("learning-rate multipliers must be positive")
        return self

    @property
    def memory_capacity(self) -> int:
        return self.memory.capacity_templates * self.model.n_template

    @classmethod
    def full(cls) -> "Config":
        return cls().validate()

    @classmethod
    def desk(cls) -> "Config":
        cfg = cls(profile="desk", model=EncoderConfig.desk())
        # from-scratch training at desk scale needs a faster slow tier than
        # fine-tuning a pretrained backbone does
        cfg.train.lr_fast = 1e-3
        cfg.train.lr_slow = 5e-4
        # desk clips are short; draw templates from the whole past, as the memory holds at inference
        cfg.train.template_window_frames = 120
        return cfg.validate()

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "Config":
        data = dict(data or {})
        profile = data.pop("profile", "full")
        if profile not in PRESETS:
            raise ConfigError(f"unknown profile {profile!r}; expected one of {sorted(PRESETS)}")
        cfg = PRESETS[profile]()
        for section, values in data.items():
            if not hasattr(cfg, section) or section == "profile":
                raise ConfigError(f"unknown config section {section!r}")
            target = getattr(cfg, section)
            if not isinstance(values, dict):
                raise ConfigError(f"section {section!r} must be a mapping")
            names = {f.name for f in dataclasses.fields(target)}
            for key, val in values.items():
                if key not in names:
                    raise ConfigError(f"unknown key {section}.{key}")
                setattr(target, key, val)
        return cfg.validate()


PRESETS = {"full": Config.full, "desk": Config.desk}


def load_config(path: str | Path) -> Config:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    return Config.from_dict(data or {})


def dump_config(cfg: Config, path: str | Path | None = None) -> str:
    text = yaml.safe_dump(cfg.to_dict(), sort_keys=False)
    if path is not None:
        Path(path).write_text(text)
    return text
