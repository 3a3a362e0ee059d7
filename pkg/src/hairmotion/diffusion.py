"""Denoising diffusion over patchified latent videos.

Training noises every latent frame except frame 0 (the reference frame) and
regresses the injected noise; sampling runs ancestral DDPM over a strided
timestep schedule while re-pinning the reference latent after every step.

At inference the domain adapter is deliberately absent: sample() refuses a
domain adapter unless explicitly forced, since it exists only to stabilize
training and degrades motion transfer when kept.
"""

from __future__ import annotations

import torch

from . import adapters as adp
from .adapters import AdapterSet, DomainAdapter, MotionAdapter
from .backbone import DiTBackbone
from .codec import LatentCodec
from .errors import ContractViolation, ValidationError

PRED_X0_CLAMP = 3.5

# cap on the per-sample (1-alpha_bar)/alpha_bar factor of the optional
# clean-signal reconstruction weight in loss_domain
X0_WEIGHT_CAP = 20.0


class NoiseSchedule:
    """Linear-beta schedule; alpha_bar is indexed by t in 0..t_max (0 = clean)."""

    def __init__(self, t_max: int = 1000, beta_start: float = 1e-4,
                 beta_end: float = 2e-2):
        if t_max < 1 or not (0.0 < beta_start <= beta_end < 1.0):
            raise ValidationError("bad schedule parameters")
        self.t_max = t_max
        betas = torch.linspace(beta_start, beta_end, t_max, dtype=torch.float64)
        ab = torch.cumprod(1.0 - betas, dim=0)
        self.betas = betas.float()
        self.alpha_bar = torch.cat([torch.ones(1, dtype=torch.float64), ab]).float()

    def ab(self, t) -> torch.Tensor:
        return self.alpha_bar[torch.as_tensor(t, dtype=torch.long)]


def forward_noise(x0: torch.Tensor, t: torch.Tensor, eps: torch.Tensor,
                  schedule: NoiseSchedule, keep_ref: bool = True) -> torch.Tensor:
    """Closed-form q(x_t | x_0) per sample; frame 0 stays clean if keep_ref.

    x0, eps: (B, T, h, w, c); t: (B,) integer timesteps in [1, t_max].
    """
    t = torch.as_tensor(t, dtype=torch.long)
    if torch.any(t < 1) or torch.any(t > schedule.t_max):
        raise ValidationError(f"timesteps must lie in [1, {schedule.t_max}]")
    ab = schedule.ab(t).view(-1, *([1] * (x0.dim() - 1))).to(x0.dtype)
    x_t = torch.sqrt(ab) * x0 + torch.sqrt(1.0 - ab) * eps
    if keep_ref:
        x_t = x_t.clone()
        x_t[:, 0] = x0[:, 0]
    return x_t


def strided_timesteps(t_max: int, steps: int) -> list[int]:
    """Descending timesteps from t_max down to 1, unique, length <= steps."""
    if steps < 1:
        raise ValidationError("steps must be >= 1")
    ts = torch.linspace(t_max, 1, min(steps, t_max)).round().long()
    out = []
    for t in ts.tolist():
        if not out or t < out[-1]:
            out.append(t)
    return out


def _frame_loss(eps_pred: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    """MSE over all latent frames except the pinned reference frame."""
    return torch.mean((eps_pred[:, 1:] - eps[:, 1:]) ** 2)


def _noisy_token_t(t, batch: int, n_tokens: int, codec: LatentCodec,
                   grid: tuple) -> torch.Tensor:
    """Per-token timesteps for the noisy sequence.

    The reference latent frame stays clean, so when the temporal patch size
    is 1 its tokens are marked with timestep 0 (the clean-token label also
    used for condition tokens); with coarser temporal patches the first
    patch mixes clean and noisy frames and keeps the noisy timestep.
    """
    t = torch.as_tensor(t, dtype=torch.long)
    token_t = t.reshape(-1, 1).expand(batch, n_tokens).clone()
    if codec.config.patch[0] == 1:
        _, gh, gw = grid
        token_t[:, : gh * gw] = 0
    return token_t


def _sample_t(batch: int, t_max: int, gen: torch.Generator) -> torch.Tensor:
    return torch.randint(1, t_max + 1, (batch,), generator=gen)


def loss_domain(backbone: DiTBackbone, codec: LatentCodec,
                schedule: NoiseSchedule, videos, caption_ids,
                adapter: DomainAdapter | None,
                gen: torch.Generator, context_frames=None,
                t: torch.Tensor | None = None,
                x0_weight: float = 0.0) -> tuple[torch.Tensor, dict]:
    """Stage-1 objective: noise regression with caption cross-attention.

    videos: (B, T, H, W, 3) uint8; caption_ids: (B, S) long or None.
    context_frames, when given, is a (B, T, H, W, 3) clean video encoded and
    concatenated after the noisy tokens at timestep 0; backbone pretraining
    uses it to teach attention into clean condition streams.
    t, when given, overrides the uniform timestep draw (the backbone
    pretraining curriculum concentrates early steps at a low timestep).
    x0_weight > 0 adds a clean-signal reconstruction term: each sample's
    noise-MSE is scaled by 1 + x0_weight * (1-ab)/ab (capped), which equals
    noise-MSE plus x0-MSE. Plain noise-MSE weights high timesteps so weakly
    that nothing trained there survives the 1/sqrt(ab) amplification the
    sampler applies to the noise estimate; the added term keeps the
    denoised-signal error uniformly incentivized across timesteps. Backbone
    pretraining only; the adapter stages keep the unweighted objective.
    """
    x0 = codec.encode(videos)
    b = x0.shape[0]
    if t is None:
        t = _sample_t(b, schedule.t_max, gen)
    eps = torch.randn(x0.shape, generator=gen, dtype=x0.dtype)
    x_t = forward_noise(x0, t, eps, schedule)
    grid = codec.grid_shape(x_t.shape)
    tokens = codec.patchify(x_t)
    n_noisy = tokens.shape[1]
    token_t = _noisy_token_t(t, b, n_noisy, codec, grid)
    if context_frames is not None:
        ctx = codec.patchify(codec.encode(context_frames))
        tokens = torch.cat([tokens, ctx], dim=1)
        token_t = torch.cat(
            [token_t, torch.zeros(b, ctx.shape[1], dtype=torch.long)], dim=1)
    out = backbone(tokens, token_t, caption_ids,
                   AdapterSet(domain=adapter), n_noisy=n_noisy)
    eps_pred = codec.unpatchify(out, grid)
    if x0_weight > 0.0:
        per = torch.mean((eps_pred[:, 1:] - eps[:, 1:]) ** 2,
                         dim=tuple(range(1, eps.dim())))
        ab = schedule.ab(t).to(per.dtype)
        w = 1.0 + torch.clamp(x0_weight * (1.0 - ab) / ab, max=X0_WEIGHT_CAP)
        loss = torch.mean(w * per)
    else:
        loss = _frame_loss(eps_pred, eps)
    return loss, {"t": t.tolist()}


def loss_motion(backbone: DiTBackbone, codec: LatentCodec,
                schedule: NoiseSchedule, videos, pose_frames, hair_frames,
                domain: DomainAdapter | None, motion: MotionAdapter,
                gen: torch.Generator,
                cond_dropout: float = 0.0) -> tuple[torch.Tensor, dict]:
    """Stage-2 objective: pose tokens added, hair tokens concatenated.

    Captions are withheld (null token only). The frozen domain adapter may be
    co-applied during training; it is never used at inference.
    """
    x0 = codec.encode(videos)
    b = x0.shape[0]
    t = _sample_t(b, schedule.t_max, gen)
    eps = torch.randn(x0.shape, generator=gen, dtype=x0.dtype)
    x_t = forward_noise(x0, t, eps, schedule)
    grid = codec.grid_shape(x_t.shape)

    z_pose = adp.pose_delta(motion, codec, pose_frames)
    z_hair = adp.encode_hair(codec, hair_frames, motion)
    if cond_dropout > 0.0:
        keep = (torch.rand(2, b, generator=gen) >= cond_dropout).to(x0.dtype)
        z_pose = z_pose * keep[0, :, None, None]
        z_hair = z_hair * keep[1, :, None, None]

    tokens = adp.inject_pose(codec.patchify(x_t), z_pose)
    z_in, n_noisy = adp.build_input(tokens, z_hair)
    token_t = torch.cat([
        _noisy_token_t(t, b, n_noisy, codec, grid),
        torch.zeros(b, z_in.shape[1] - n_noisy, dtype=torch.long)], dim=1)
    out = backbone(z_in, token_t, None,
                   AdapterSet(domain=domain, motion=motion), n_noisy=n_noisy)
    eps_pred = codec.unpatchify(out, grid)
    loss = _frame_loss(eps_pred, eps)
    return loss, {"t": t.tolist()}


@torch.no_grad()
def sample(backbone: DiTBackbone, codec: LatentCodec, schedule: NoiseSchedule,
           ref_image, n_frames: int, *,
           motion: MotionAdapter | None = None,
           pose_frames=None, hair_frames=None,
           caption_ids: torch.Tensor | None = None,
           domain: DomainAdapter | None = None,
           allow_domain: bool = False,
           steps: int = 40, seed: int = 0):
    """Ancestral sampling of an (n_frames, H, W, 3) uint8 clip.

    The reference frame is encoded once and overwrites latent frame 0 after
    every denoising step, so frame 0 of the output reproduces ref_image.
    """
    if domain is not None and not allow_domain:
        raise ContractViolation(
            "domain adapter passed to sample(); it is a training-only aid "
            "and must be dropped at inference (use allow_domain to override)")
    if (pose_frames is not None or hair_frames is not None) and motion is None:
        raise ValidationError("pose/hair conditions require a motion adapter")

    ref_lat = codec.encode(ref_image)          # (h, w, c)
    gen = torch.Generator().manual_seed(seed)
    x = torch.randn((1, n_frames, *ref_lat.shape), generator=gen,
                    dtype=ref_lat.dtype)
    x[:, 0] = ref_lat
    grid = codec.grid_shape(x.shape)

    adapters = AdapterSet(domain=domain if allow_domain else None, motion=motion)
    z_pose = None
    z_hair = None
    if motion is not None and pose_frames is not None:
        z_pose = adp.pose_delta(motion, codec, pose_frames)[None]
    if motion is not None and hair_frames is not None:
        z_hair = adp.encode_hair(codec, hair_frames, motion)[None]

    ts = strided_timesteps(schedule.t_max, steps)
    for i, t in enumerate(ts):
        t_prev = ts[i + 1] if i + 1 < len(ts) else 0
        ab_t = float(schedule.ab(t))
        ab_prev = float(schedule.ab(t_prev))

        tokens = codec.patchify(x)
        if z_pose is not None:
            tokens = adp.inject_pose(tokens, z_pose)
        z_in, n_noisy = adp.build_input(tokens, z_hair)
        token_t = torch.zeros((1, z_in.shape[1]), dtype=torch.long)
        token_t[:, :n_noisy] = _noisy_token_t(t, 1, n_noisy, codec, grid)
        out = backbone(z_in, token_t, caption_ids, adapters, n_noisy=n_noisy)
        eps = codec.unpatchify(out, grid)

        pred_x0 = (x - (1.0 - ab_t) ** 0.5 * eps) / ab_t ** 0.5
        pred_x0 = pred_x0.clamp(-PRED_X0_CLAMP, PRED_X0_CLAMP)
        pred_x0 = codec.project_latent(pred_x0)
        beta_cur = 1.0 - ab_t / ab_prev
        mean = ((ab_prev ** 0.5 * beta_cur / (1.0 - ab_t)) * pred_x0
                + ((ab_t / ab_prev) ** 0.5 * (1.0 - ab_prev) / (1.0 - ab_t)) * x)
        if t_prev > 0:
            var = beta_cur * (1.0 - ab_prev) / (1.0 - ab_t)
            noise = torch.randn(x.shape, generator=gen, dtype=x.dtype)
            x = mean + var ** 0.5 * noise
        else:
            x = mean
        x[:, 0] = ref_lat

    frames = codec.decode(x[0])
    return frames
