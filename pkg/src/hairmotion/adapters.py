"""Low-rank adapter groups and the token-level condition injection logic.

Two disjoint parameter groups exist:
  * domain adapter: LoRA deltas on every block's self-attention Q/K/V/O,
    used only during training and discarded at inference;
  * motion adapter: the same LoRA layout plus a trainable pose encoder
    (a copy of the frozen codec transform) and a hair role-offset vector.

All adapter outputs are exactly zero at initialization, so a freshly built
adapter set leaves the backbone's function unchanged.
"""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn
from einops import rearrange

from .codec import LatentCodec
from .errors import ValidationError

PROJECTIONS = ("q", "k", "v", "o")


class LoraLayer(nn.Module):
    """Rank-r additive delta B(A(x)) * alpha/r with B zero-initialized."""

    def __init__(self, d: int, rank: int = 8, alpha: float | None = None):
        super().__init__()
        if not (1 <= rank <= d):
            raise ValidationError(f"rank must lie in [1, {d}]")
        self.rank = rank
        self.alpha = float(alpha if alpha is not None else rank)
        self.down = nn.Linear(d, rank, bias=False)
        self.up = nn.Linear(rank, d, bias=False)
        nn.init.zeros_(self.up.weight)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.up(self.down(x)) * (self.alpha / self.rank)

    def delta_weight(self) -> torch.Tensor:
        """Effective d x d weight delta (rank <= r by construction)."""
        return (self.up.weight @ self.down.weight) * (self.alpha / self.rank)


class LoraGroup(nn.Module):
    """One LoraLayer per (block, self-attention projection)."""

    def __init__(self, n_blocks: int, d: int, rank: int = 8,
                 alpha: float | None = None):
        super().__init__()
        self.layers = nn.ModuleList(
            nn.ModuleDict({p: LoraLayer(d, rank, alpha) for p in PROJECTIONS})
            for _ in range(n_blocks))

    def delta(self, block_idx: int, proj: str, x: torch.Tensor) -> torch.Tensor:
        return self.layers[block_idx][proj](x)


class PoseEncoder(nn.Module):
    """Trainable twin of the frozen codec transform.

    Same normalize + space-to-depth geometry, but the orthogonal channel
    mixing is a trainable linear layer initialized to an exact copy, so at
    construction its output equals the frozen codec's.
    """

    def __init__(self, codec: LatentCodec):
        super().__init__()
        c = codec.config.channels
        self.spatial_factor = codec.config.spatial_factor
        self.mixer = nn.Linear(c, c, bias=True)
        with torch.no_grad():
            self.mixer.weight.copy_(codec.mix.T)
            self.mixer.bias.zero_()

    def forward(self, frames) -> torch.Tensor:
        x = torch.as_tensor(np.asarray(frames)).to(self.mixer.weight.dtype)
        f = self.spatial_factor
        if x.shape[-3] % f or x.shape[-2] % f:
            raise ValidationError(f"pixel dims must be divisible by spatial factor {f}")
        x = x / 127.5 - 1.0
        z = rearrange(x, "... (h f1) (w f2) c -> ... h w (f1 f2 c)", f1=f, f2=f)
        return self.mixer(z)


class DomainAdapter(nn.Module):
    def __init__(self, n_blocks: int, d: int, rank: int = 8,
                 alpha: float | None = None):
        super().__init__()
        self.lora = LoraGroup(n_blocks, d, rank, alpha)


class MotionAdapter(nn.Module):
    def __init__(self, n_blocks: int, d: int, codec: LatentCodec,
                 rank: int = 8, alpha: float | None = None):
        super().__init__()
        self.lora = LoraGroup(n_blocks, d, rank, alpha)
        self.pose_encoder = PoseEncoder(codec)
        self.hair_offset = nn.Parameter(torch.zeros(d))


class AdapterSet:
    """The adapter groups visible to a forward pass; deltas stack additively."""

    def __init__(self, domain: DomainAdapter | None = None,
                 motion: MotionAdapter | None = None):
        self.domain = domain
        self.motion = motion

    def lora_delta(self, block_idx: int, proj: str, x: torch.Tensor):
        out = 0.0
        if self.domain is not None:
            out = out + self.domain.lora.delta(block_idx, proj, x)
        if self.motion is not None:
            out = out + self.motion.lora.delta(block_idx, proj, x)
        return out

    def groups(self) -> dict:
        out = {}
        if self.domain is not None:
            out["domain"] = self.domain
        if self.motion is not None:
            out["motion"] = self.motion
        return out


def build_domain_adapter(n_blocks: int, d: int, rank: int, seed: int,
                         alpha: float | None = None,
                         dtype=torch.float32) -> DomainAdapter:
    torch.manual_seed(seed)
    return DomainAdapter(n_blocks, d, rank, alpha).to(dtype)


def build_motion_adapter(n_blocks: int, d: int, codec: LatentCodec, rank: int,
                         seed: int, alpha: float | None = None,
                         dtype=torch.float32) -> MotionAdapter:
    torch.manual_seed(seed)
    return MotionAdapter(n_blocks, d, codec, rank, alpha).to(dtype)


# -- condition token construction (pose addition, hair concatenation) --------

def encode_pose(motion: MotionAdapter, codec: LatentCodec, frames) -> torch.Tensor:
    """Pose tokens: trainable encoder + the codec's patchify and posemb."""
    return codec.patchify(motion.pose_encoder(frames))


def pose_delta(motion: MotionAdapter, codec: LatentCodec, frames) -> torch.Tensor:
    """Injected pose signal: the pose encoder's deviation from the frozen
    codec pathway.

    The noisy tokens already carry positional embeddings, so the injection
    uses the difference of the two encodings (their shared posemb cancels).
    The pose encoder starts as an exact copy of the codec, so this is zero at
    construction and the conditioned pass starts fully transparent; only
    learned pose information ever perturbs the noisy tokens.
    """
    z = motion.pose_encoder(frames) - codec.encode(frames)
    return codec.patchify(z, add_posemb=False)


def inject_pose(z_t: torch.Tensor, z_pose: torch.Tensor) -> torch.Tensor:
    """Element-wise additive injection into the noisy tokens."""
    if z_t.shape != z_pose.shape:
        raise ValidationError(f"shape mismatch: {z_t.shape} vs {z_pose.shape}")
    return z_t + z_pose


def encode_hair(codec: LatentCodec, frames,
                motion: MotionAdapter | None = None) -> torch.Tensor:
    """Hair tokens: frozen codec pathway plus the learned role offset."""
    tokens = codec.patchify(codec.encode(frames))
    if motion is not None:
        tokens = tokens + motion.hair_offset
    return tokens


def build_input(z_tp: torch.Tensor, z_hair: torch.Tensor | None,
                ) -> tuple[torch.Tensor, int]:
    """Concatenate noisy and hair tokens; returns (z_in, noisy length)."""
    n_noisy = z_tp.shape[-2]
    if z_hair is None or z_hair.shape[-2] == 0:
        return z_tp, n_noisy
    if z_hair.shape[-1] != z_tp.shape[-1]:
        raise ValidationError("token dims of noisy and hair sequences differ")
    return torch.cat([z_tp, z_hair], dim=-2), n_noisy
