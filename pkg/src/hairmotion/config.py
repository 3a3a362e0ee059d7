"""Resolved run configuration: model geometry, schedule, and stage plans.

Every command writes its fully resolved config next to its outputs so runs
are reproducible from the file plus the input checkpoints.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from . import captions
from .backbone import BackboneConfig
from .codec import CodecConfig
from .errors import ValidationError


@dataclass
class ModelConfig:
    codec_seed: int = 0
    spatial_factor: int = 2
    patch: tuple = (2, 4, 4)
    d_model: int = 384
    n_blocks: int = 6
    n_heads: int = 4
    mlp_ratio: int = 4
    t_max: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 2e-2
    window_frames: int = 8
    height: int = 64
    width: int = 64
    rank_domain: int = 8
    rank_motion: int = 8
    init_seed: int = 0

    def __post_init__(self):
        self.patch = tuple(self.patch)
        pt, ph, pw = self.patch
        if self.window_frames % pt:
            raise ValidationError("window_frames must be divisible by temporal patch")
        f = self.spatial_factor
        if (self.height // f) % ph or (self.width // f) % pw:
            raise ValidationError("latent resolution must be divisible by spatial patch")

    @property
    def downsample_factor(self) -> int:
        return self.spatial_factor * max(self.patch[1], self.patch[2])

    def codec_config(self) -> CodecConfig:
        return CodecConfig(seed=self.codec_seed, spatial_factor=self.spatial_factor,
                           patch=self.patch, d_model=self.d_model)

    def backbone_config(self) -> BackboneConfig:
        return BackboneConfig(
            n_blocks=self.n_blocks, d_model=self.d_model, n_heads=self.n_heads,
            mlp_ratio=self.mlp_ratio, patch_dim=self.codec_config().patch_dim,
            vocab_size=captions.VOCAB_SIZE,
            max_caption_len=captions.MAX_CAPTION_LEN, t_max=self.t_max)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["patch"] = list(self.patch)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class StagePlan:
    stage: int                 # 0: backbone pretrain, 1: domain, 2: motion
    steps: int = 400
    batch_size: int = 2
    lr: float = 2e-4
    adam_betas: tuple = (0.9, 0.999)
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    seed: int = 0
    ckpt_every: int = 200
    cond_dropout: float = 0.1  # stage 2 only
    audit_every: int = 100
    no_domain_lora: bool = False

    def __post_init__(self):
        self.adam_betas = tuple(self.adam_betas)
        if self.stage not in (0, 1, 2):
            raise ValidationError("stage must be 0, 1 or 2")
        if self.steps < 0 or self.batch_size < 1:
            raise ValidationError("steps must be >= 0 and batch_size >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        return d

    @classmethod
    def from_dict(cls, d: dict, stage: int | None = None) -> "StagePlan":
        d = dict(d)
        if stage is not None:
            d["stage"] = stage
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown stage plan keys: {sorted(unknown)}")
        return cls(**d)


def load_json(path: str) -> dict:
    try:
        with open(path) as f:
            return json.load(f)
    except FileNotFoundError:
        raise ValidationError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ValidationError(f"config file {path} is not valid JSON: {e}")


def dump_json(obj: dict, path: str):
    with open(path, "w") as f:
        json.dump(obj, f, indent=1, sort_keys=True)
