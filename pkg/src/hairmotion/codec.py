"""Frozen pixel <-> latent codec and 3D patchification.

The codec replaces a learned VAE with an exactly invertible transform:
normalize 8-bit pixels to [-1, 1], space-to-depth by a spatial factor, then a
fixed seeded orthogonal channel-mixing matrix. It exposes no trainable
parameters; everything is generated once from the build-time seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
from einops import rearrange

from .errors import ValidationError


@dataclass
class CodecConfig:
    seed: int = 0
    spatial_factor: int = 2
    patch: tuple = (2, 8, 8)  # (p_t, p_h, p_w) over the latent grid
    d_model: int = 128

    @property
    def channels(self) -> int:
        return 3 * self.spatial_factor ** 2

    @property
    def patch_dim(self) -> int:
        pt, ph, pw = self.patch
        return pt * ph * pw * self.channels

    def to_dict(self) -> dict:
        return {"seed": self.seed, "spatial_factor": self.spatial_factor,
                "patch": list(self.patch), "d_model": self.d_model}

    @classmethod
    def from_dict(cls, d: dict) -> "CodecConfig":
        return cls(seed=d["seed"], spatial_factor=d["spatial_factor"],
                   patch=tuple(d["patch"]), d_model=d["d_model"])


def sinusoid_table(n: int, dim: int, dtype) -> torch.Tensor:
    """Standard sin/cos positional table, shape (n, dim)."""
    pos = np.arange(n)[:, None]
    half = (dim + 1) // 2
    freq = 1.0 / (10000.0 ** (np.arange(half) / max(half, 1)))
    ang = pos * freq[None, :]
    table = np.concatenate([np.sin(ang), np.cos(ang)], axis=1)[:, :dim]
    return torch.tensor(table, dtype=dtype)


class LatentCodec:
    """Deterministic, exactly invertible encoder/decoder plus patchify."""

    def __init__(self, config: CodecConfig | None = None,
                 dtype: torch.dtype = torch.float32):
        self.config = config or CodecConfig()
        self.dtype = dtype
        c = self.config.channels
        rng = np.random.default_rng(self.config.seed)
        q, r = np.linalg.qr(rng.standard_normal((c, c)))
        q = q * np.sign(np.diag(r))  # deterministic sign convention
        self.mix = torch.tensor(q, dtype=dtype)  # latent = z @ mix
        w = rng.standard_normal((self.config.patch_dim, self.config.d_model))
        self.embed = torch.tensor(w / np.sqrt(self.config.patch_dim), dtype=dtype)
        self._posemb_cache: dict[tuple, torch.Tensor] = {}

    # -- pixel <-> latent ---------------------------------------------------

    def encode(self, frames) -> torch.Tensor:
        """(T, H, W, 3) uint8 (or batched) -> (T, h, w, c) latent."""
        x = torch.as_tensor(np.asarray(frames), dtype=self.dtype)
        f = self.config.spatial_factor
        if x.shape[-3] % f or x.shape[-2] % f:
            raise ValidationError(f"pixel dims must be divisible by spatial factor {f}")
        x = x / 127.5 - 1.0
        z = rearrange(x, "... (h f1) (w f2) c -> ... h w (f1 f2 c)", f1=f, f2=f)
        return torch.nn.functional.linear(z, self.mix.T)  # z @ mix

    def decode(self, latent: torch.Tensor) -> np.ndarray:
        """Exact inverse of encode, clamped to [-1, 1] and re-quantized."""
        z = torch.nn.functional.linear(latent.to(self.dtype), self.mix)  # @ mix^-1
        f = self.config.spatial_factor
        x = rearrange(z, "... h w (f1 f2 c) -> ... (h f1) (w f2) c", f1=f, f2=f, c=3)
        x = torch.clamp(x, -1.0, 1.0)
        return ((x + 1.0) * 127.5).round().to(torch.uint8).numpy()

    def project_latent(self, latent: torch.Tensor) -> torch.Tensor:
        """Nearest latent whose decoded pixels lie inside the valid [-1, 1] cube.

        Because the channel mix is orthogonal and space-to-depth is a
        permutation, clamping in pixel space and re-encoding is the exact
        Euclidean projection in latent space.
        """
        z = torch.nn.functional.linear(latent.to(self.dtype), self.mix)
        z = torch.clamp(z, -1.0, 1.0)
        return torch.nn.functional.linear(z, self.mix.T)

    # -- latent <-> tokens --------------------------------------------------

    def grid_shape(self, latent_shape) -> tuple:
        t, h, w, c = latent_shape[-4:]
        pt, ph, pw = self.config.patch
        if t % pt or h % ph or w % pw:
            raise ValidationError(
                f"latent dims {(t, h, w)} not divisible by patch {self.config.patch}")
        return (t // pt, h // ph, w // pw)

    def posemb(self, grid: tuple) -> torch.Tensor:
        """Factored sinusoidal embeddings over (t, h, w), shape (L, d)."""
        if grid not in self._posemb_cache:
            d = self.config.d_model
            dims = (d - 2 * (d // 3), d // 3, d // 3)
            gt, gh, gw = grid
            et = sinusoid_table(gt, dims[0], self.dtype)
            eh = sinusoid_table(gh, dims[1], self.dtype)
            ew = sinusoid_table(gw, dims[2], self.dtype)
            emb = torch.cat([
                et[:, None, None, :].expand(gt, gh, gw, dims[0]),
                eh[None, :, None, :].expand(gt, gh, gw, dims[1]),
                ew[None, None, :, :].expand(gt, gh, gw, dims[2]),
            ], dim=-1)
            self._posemb_cache[grid] = emb.reshape(-1, d)
        return self._posemb_cache[grid]

    def patch_flatten(self, latent: torch.Tensor) -> torch.Tensor:
        pt, ph, pw = self.config.patch
        self.grid_shape(latent.shape)
        return rearrange(latent, "... (gt pt) (gh ph) (gw pw) c -> ... (gt gh gw) (pt ph pw c)",
                         pt=pt, ph=ph, pw=pw)

    def patchify(self, latent: torch.Tensor, add_posemb: bool = True) -> torch.Tensor:
        """Project non-overlapping 3D patches to d-dim tokens, (+ posemb)."""
        grid = self.grid_shape(latent.shape)
        tokens = self.patch_flatten(latent.to(self.embed.dtype)) @ self.embed
        if add_posemb:
            tokens = tokens + self.posemb(grid)
        return tokens

    def unpatchify(self, patches: torch.Tensor, grid: tuple) -> torch.Tensor:
        """Patch-dim vectors back to latent layout (used for the model head)."""
        pt, ph, pw = self.config.patch
        gt, gh, gw = grid
        return rearrange(patches, "... (gt gh gw) (pt ph pw c) -> ... (gt pt) (gh ph) (gw pw) c",
                         gt=gt, gh=gh, gw=gw, pt=pt, ph=ph, pw=pw)

    def tokens_to_latent(self, tokens: torch.Tensor, grid: tuple) -> torch.Tensor:
        """Pseudo-inverse of patchify (tokens must be posemb-free)."""
        pinv = torch.linalg.pinv(self.embed)
        return self.unpatchify(tokens @ pinv, grid)
