"""Toy video diffusion transformer operating on patchified latent tokens.

Blocks apply self-attention over the full (noisy || hair) token sequence,
caption cross-attention, and an MLP, all modulated by per-token timestep
embeddings (adaLN style, zero-initialized modulation). The final head maps
tokens to patch-shaped noise; callers slice off condition-token positions.

Low-rank adapter deltas are injected into the self-attention Q/K/V/O
projections from the outside; the backbone itself owns no adapter state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from . import captions
from .errors import ValidationError


@dataclass
class BackboneConfig:
    n_blocks: int = 6
    d_model: int = 384
    n_heads: int = 4
    mlp_ratio: int = 4
    patch_dim: int = 384
    vocab_size: int = captions.VOCAB_SIZE
    max_caption_len: int = captions.MAX_CAPTION_LEN
    t_max: int = 1000

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValidationError("d_model must be divisible by n_heads")

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "BackboneConfig":
        return cls(**d)


def timestep_sinusoid(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal features of (possibly per-token) timesteps, (..., dim)."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=t.dtype) / half)
    ang = t.unsqueeze(-1).to(freqs.dtype) * freqs
    out = torch.cat([torch.sin(ang), torch.cos(ang)], dim=-1)
    if dim % 2:
        out = F.pad(out, (0, 1))
    return out


class SelfAttention(nn.Module):
    def __init__(self, d: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.q = nn.Linear(d, d)
        self.k = nn.Linear(d, d)
        self.v = nn.Linear(d, d)
        self.o = nn.Linear(d, d)

    def forward(self, x: torch.Tensor, block_idx: int, adapters=None) -> torch.Tensor:
        b, l, d = x.shape
        hd = d // self.n_heads

        def proj(layer, name):
            y = layer(x)
            if adapters is not None:
                y = y + adapters.lora_delta(block_idx, name, x)
            return y.view(b, l, self.n_heads, hd).transpose(1, 2)

        q = proj(self.q, "q")
        k = proj(self.k, "k")
        v = proj(self.v, "v")
        out = F.scaled_dot_product_attention(q, k, v)
        out = out.transpose(1, 2).reshape(b, l, d)
        y = self.o(out)
        if adapters is not None:
            y = y + adapters.lora_delta(block_idx, "o", out)
        return y


class CrossAttention(nn.Module):
    def __init__(self, d: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.q = nn.Linear(d, d)
        self.kv = nn.Linear(d, 2 * d)
        self.o = nn.Linear(d, d)

    def forward(self, x: torch.Tensor, ctx: torch.Tensor,
                ctx_mask: torch.Tensor) -> torch.Tensor:
        b, l, d = x.shape
        s = ctx.shape[1]
        hd = d // self.n_heads
        q = self.q(x).view(b, l, self.n_heads, hd).transpose(1, 2)
        kv = self.kv(ctx).view(b, s, 2, self.n_heads, hd)
        k = kv[:, :, 0].transpose(1, 2)
        v = kv[:, :, 1].transpose(1, 2)
        mask = ctx_mask[:, None, None, :]  # True = attend
        out = F.scaled_dot_product_attention(q, k, v, attn_mask=mask)
        return self.o(out.transpose(1, 2).reshape(b, l, d))


class Block(nn.Module):
    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        d = cfg.d_model
        self.norm1 = nn.LayerNorm(d, elementwise_affine=False)
        self.attn = SelfAttention(d, cfg.n_heads)
        self.norm_cross = nn.LayerNorm(d, elementwise_affine=False)
        self.cross = CrossAttention(d, cfg.n_heads)
        self.norm2 = nn.LayerNorm(d, elementwise_affine=False)
        self.mlp = nn.Sequential(
            nn.Linear(d, cfg.mlp_ratio * d), nn.GELU(),
            nn.Linear(cfg.mlp_ratio * d, d))
        self.modulation = nn.Linear(d, 6 * d)
        nn.init.zeros_(self.modulation.weight)
        nn.init.zeros_(self.modulation.bias)

    def forward(self, x, t_emb, ctx, ctx_mask, block_idx, adapters=None):
        m = self.modulation(F.silu(t_emb))
        sh_a, sc_a, g_a, sh_m, sc_m, g_m = m.chunk(6, dim=-1)
        h = self.norm1(x) * (1 + sc_a) + sh_a
        x = x + (1 + g_a) * self.attn(h, block_idx, adapters)
        x = x + self.cross(self.norm_cross(x), ctx, ctx_mask)
        h = self.norm2(x) * (1 + sc_m) + sh_m
        x = x + (1 + g_m) * self.mlp(h)
        return x


class DiTBackbone(nn.Module):
    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.config = config
        d = config.d_model
        self.t_mlp = nn.Sequential(nn.Linear(d, d), nn.SiLU(), nn.Linear(d, d))
        self.caption_embed = nn.Embedding(config.vocab_size, d,
                                          padding_idx=captions.PAD_ID)
        self.null_token = nn.Parameter(torch.zeros(1, 1, d))
        cap_pos = timestep_sinusoid(
            torch.arange(config.max_caption_len, dtype=torch.float32), d)
        self.register_buffer("caption_pos", cap_pos, persistent=False)
        self.blocks = nn.ModuleList(Block(config) for _ in range(config.n_blocks))
        self.norm_out = nn.LayerNorm(d, elementwise_affine=False)
        self.mod_out = nn.Linear(d, 2 * d)
        nn.init.zeros_(self.mod_out.weight)
        nn.init.zeros_(self.mod_out.bias)
        self.head = nn.Linear(d, config.patch_dim)
        nn.init.normal_(self.head.weight, std=0.02)
        nn.init.zeros_(self.head.bias)

    def caption_context(self, caption_ids: torch.Tensor | None, batch: int,
                        dtype, device):
        """Caption embeddings with a never-masked learned null token prepended."""
        null = self.null_token.expand(batch, 1, -1)
        if caption_ids is None:
            mask = torch.ones(batch, 1, dtype=torch.bool, device=device)
            return null, mask
        emb = self.caption_embed(caption_ids) + self.caption_pos[: caption_ids.shape[1]]
        ctx = torch.cat([null, emb], dim=1)
        mask = torch.cat([
            torch.ones(batch, 1, dtype=torch.bool, device=device),
            caption_ids != captions.PAD_ID], dim=1)
        return ctx, mask

    def forward(self, tokens: torch.Tensor, token_t: torch.Tensor,
                caption_ids: torch.Tensor | None = None,
                adapters=None, n_noisy: int | None = None) -> torch.Tensor:
        """Per-token noise prediction, truncated to the first n_noisy positions.

        tokens: (B, L, d); token_t: (B, L) timesteps (0 for condition tokens);
        caption_ids: (B, S) or None for the null caption.
        """
        if tokens.dim() != 3 or tokens.shape[-1] != self.config.d_model:
            raise ValidationError(f"tokens must be (B, L, {self.config.d_model})")
        if token_t.shape != tokens.shape[:2]:
            raise ValidationError("token_t must match tokens (B, L)")
        if torch.any(token_t < 0) or torch.any(token_t > self.config.t_max):
            raise ValidationError(f"timesteps must lie in [0, {self.config.t_max}]")
        b, l, d = tokens.shape
        n_noisy = l if n_noisy is None else n_noisy
        t_emb = self.t_mlp(timestep_sinusoid(token_t.to(tokens.dtype), d))
        ctx, mask = self.caption_context(caption_ids, b, tokens.dtype, tokens.device)
        x = tokens
        for i, blk in enumerate(self.blocks):
            x = blk(x, t_emb, ctx, mask, i, adapters)
        sh, sc = self.mod_out(F.silu(t_emb)).chunk(2, dim=-1)
        x = self.norm_out(x) * (1 + sc) + sh
        return self.head(x[:, :n_noisy])


# q/k gain of the similarity-matching heads at init (see build_backbone)
MATCH_HEAD_GAIN = 1.0


def build_backbone(config: BackboneConfig, seed: int,
                   dtype: torch.dtype = torch.float32) -> DiTBackbone:
    """Deterministically initialized backbone.

    In every block the first half of the self-attention heads start as
    token-similarity matchers: q and k share one random projection per head,
    so the attention logit between two tokens approximates their full-token
    inner product (a Johnson-Lindenstrauss sketch). Tokens carry shared
    positional codes, so at init these heads attend to same-position tokens
    across the whole sequence -- in particular from noisy tokens to clean
    reference or condition tokens at the same location. That turns
    copy-from-clean-content circuits, which plain training at desk scale
    fails to discover, into a first-order learnable refinement of an
    existing attention pattern.
    """
    torch.manual_seed(seed)
    model = DiTBackbone(config).to(dtype)
    d = config.d_model
    hd = d // config.n_heads
    with torch.no_grad():
        for blk in model.blocks:
            for h in range(config.n_heads // 2):
                rows = slice(h * hd, (h + 1) * hd)
                proj = (MATCH_HEAD_GAIN / hd ** 0.5) * torch.randn(
                    hd, d, dtype=dtype)
                blk.attn.q.weight[rows] = proj
                blk.attn.k.weight[rows] = proj
                blk.attn.q.bias[rows] = 0.0
                blk.attn.k.bias[rows] = 0.0
    return model
