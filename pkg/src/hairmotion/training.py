"""Three-stage training orchestration with freeze auditing and resume.

Stage 0 pretrains the transformer backbone on a procedural moving-shapes
corpus (hair-free, captioned). Stage 1 trains only the domain adapter on the
hair dataset with captions; stage 2 trains only the motion adapter with pose
and hair conditions. The backbone is frozen after stage 0 and the domain
adapter after stage 1; freeze compliance is verified by content hashes at a
fixed cadence and any drift aborts the run naming the offending tensor.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import cv2
import numpy as np
import torch

from . import captions, checkpoint as ckpt, diffusion as dif
from .adapters import build_domain_adapter, build_motion_adapter
from .backbone import build_backbone
from .codec import LatentCodec
from .config import ModelConfig, StagePlan
from .data import BatchLoader
from .errors import AuditError, HairMotionError, ValidationError


@dataclass
class StageResult:
    ckpt_path: str
    csv_path: str
    steps_run: int
    final_loss: float


# -- stage-0 corpus: bouncing shapes ------------------------------------------

def shapes_clip(rng: np.random.Generator, n_frames: int, height: int,
                width: int) -> tuple[np.ndarray, str]:
    """One procedural clip of bouncing shapes plus its caption."""
    n_shapes = int(rng.integers(1, 5))
    kind = ["circle", "square", "triangle"][int(rng.integers(3))]
    bg = int(rng.integers(20, 90))
    frames = np.full((n_frames, height, width, 3), bg, np.uint8)
    pos = rng.uniform(0.2, 0.8, (n_shapes, 2))
    vel = rng.uniform(-0.06, 0.06, (n_shapes, 2))
    size = rng.uniform(0.08, 0.18, n_shapes)
    colors = rng.integers(100, 256, (n_shapes, 3))
    for f in range(n_frames):
        img = frames[f]
        for s in range(n_shapes):
            cx = int(pos[s, 0] * width)
            cy = int(pos[s, 1] * height)
            r = max(2, int(size[s] * min(height, width)))
            color = tuple(int(c) for c in colors[s])
            if kind == "circle":
                cv2.circle(img, (cx, cy), r, color, -1)
            elif kind == "square":
                cv2.rectangle(img, (cx - r, cy - r), (cx + r, cy + r), color, -1)
            else:
                pts = np.array([[cx, cy - r], [cx - r, cy + r], [cx + r, cy + r]])
                cv2.fillPoly(img, [pts], color)
        pos += vel
        bounce = (pos < 0.05) | (pos > 0.95)
        vel[bounce] *= -1.0
        pos = np.clip(pos, 0.05, 0.95)
    return frames, captions.shapes_caption(n_shapes, kind)


def shapes_batch(rng: np.random.Generator, batch: int, n_frames: int,
                 height: int, width: int):
    clips, caps = zip(*(shapes_clip(rng, n_frames, height, width)
                        for _ in range(batch)))
    cap_ids = torch.tensor(np.stack([captions.encode_caption(c) for c in caps]))
    return np.stack(clips), cap_ids


# Stage-0 timestep curriculum. The copy-from-context attention circuit only
# forms under concentrated low-timestep training (that is where knowing the
# clean video makes plain noise prediction nearly free, so the incentive is
# steep); once formed it is kept alive and extended to the full timestep
# range by a second phase that mixes timesteps with a low-range bias, keeps
# the context stream present on most batches (usually the full clean clip,
# sometimes occluded, sometimes absent), and adds the clean-signal
# reconstruction weight (see loss_domain) so using the context pays off at
# high timesteps too.
STAGE0_PHASE_A_FRAC = 0.4
STAGE0_PHASE_A_T = 5
STAGE0_LOW_T_P = 0.2
STAGE0_LOW_T_MAX = 10
STAGE0_CTX_FULL_P = 0.7
STAGE0_CTX_MASKED_P = 0.2
STAGE0_X0_WEIGHT = 1.0


def masked_context(videos: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Clean-video context with random occlusion for backbone pretraining.

    A union of random rectangles stays visible per clip; everything else is
    blacked out. Training against this stream teaches the backbone two
    habits that later condition streams rely on: copy content from
    matching-position timestep-0 tokens, and treat black context pixels as
    carrying no information.
    """
    b, _, h, w, _ = videos.shape
    out = np.zeros_like(videos)
    for i in range(b):
        visible = np.zeros((h, w), dtype=bool)
        for _ in range(int(rng.integers(1, 4))):
            y0 = int(rng.integers(0, h - 4))
            x0 = int(rng.integers(0, w - 4))
            y1 = int(rng.integers(y0 + 4, h + 1))
            x1 = int(rng.integers(x0 + 4, w + 1))
            visible[y0:y1, x0:x1] = True
        out[i][:, visible] = videos[i][:, visible]
    return out


# -- parameter auditing --------------------------------------------------------

def audit_parameters(groups: dict) -> list[dict]:
    """Per-tensor report: group, name, shape, trainable flag, digest."""
    rows = []
    seen = {}
    for gname, module in groups.items():
        for pname, p in module.named_parameters():
            if id(p) in seen:
                raise AuditError(
                    f"parameter {gname}.{pname} aliases {seen[id(p)]}")
            seen[id(p)] = f"{gname}.{pname}"
            rows.append({"group": gname, "name": pname,
                         "shape": tuple(p.shape),
                         "trainable": p.requires_grad,
                         "digest": ckpt.tensor_digest(p)})
    return rows


def _freeze(module: torch.nn.Module) -> dict:
    """Disable grads and snapshot per-tensor digests for later comparison."""
    module.requires_grad_(False)
    return {n: ckpt.tensor_digest(p) for n, p in module.named_parameters()}


def _check_frozen(frozen: dict, step: int):
    for gname, (module, digests) in frozen.items():
        for n, p in module.named_parameters():
            if ckpt.tensor_digest(p) != digests[n]:
                raise AuditError(
                    f"frozen parameter {gname}.{n} changed by step {step}")


# -- generic training loop -------------------------------------------------------

def _state_path(out_dir: str) -> str:
    return os.path.join(out_dir, "train_state.pt")


def _run_loop(plan: StagePlan, out_dir: str, trainable: torch.nn.Module,
              frozen: dict, step_fn, np_rng: np.random.Generator,
              resume: bool = False) -> tuple[int, float, str]:
    """Shared optimizer loop. step_fn(np_rng, gen, step) must return the loss."""
    os.makedirs(out_dir, exist_ok=True)
    params = [p for p in trainable.parameters() if p.requires_grad]
    if not params:
        raise ValidationError("no trainable parameters in this stage")
    opt = torch.optim.AdamW(params, lr=plan.lr, betas=plan.adam_betas,
                            weight_decay=plan.weight_decay)
    gen = torch.Generator().manual_seed(plan.seed)
    start = 0
    rows = []

    state_path = _state_path(out_dir)
    if resume:
        if not os.path.exists(state_path):
            raise ValidationError(f"no resume state at {state_path}")
        state = torch.load(state_path, map_location="cpu", weights_only=False)
        trainable.load_state_dict(state["trainable"])
        opt.load_state_dict(state["optimizer"])
        gen.set_state(state["torch_gen"])
        np_rng.bit_generator.state = state["np_rng"]
        start = state["step"]
        rows = state["rows"]

    def save_state(step):
        torch.save({
            "step": step,
            "trainable": trainable.state_dict(),
            "optimizer": opt.state_dict(),
            "torch_gen": gen.get_state(),
            "np_rng": np_rng.bit_generator.state,
            "rows": rows,
        }, state_path)

    last_loss = float(rows[-1][1]) if rows else float("nan")
    for step in range(start, plan.steps):
        opt.zero_grad(set_to_none=True)
        loss = step_fn(np_rng, gen, step)
        if not torch.isfinite(loss):
            raise HairMotionError(f"non-finite loss at step {step}")
        loss.backward()
        grad_norm = float(torch.nn.utils.clip_grad_norm_(params, plan.grad_clip))
        opt.step()
        last_loss = float(loss.detach())
        rows.append([step, last_loss, grad_norm, plan.lr])
        done = step + 1
        if plan.audit_every and done % plan.audit_every == 0:
            _check_frozen(frozen, done)
        if plan.ckpt_every and done % plan.ckpt_every == 0:
            save_state(done)
    _check_frozen(frozen, plan.steps)
    save_state(plan.steps)

    csv_path = os.path.join(out_dir, "metrics.csv")
    with open(csv_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "loss", "grad_norm", "lr"])
        w.writerows(rows)
    return plan.steps, last_loss, csv_path


# -- stages ----------------------------------------------------------------------

def build_runtime(mc: ModelConfig):
    codec = LatentCodec(mc.codec_config())
    schedule = dif.NoiseSchedule(mc.t_max, mc.beta_start, mc.beta_end)
    return codec, schedule


def load_backbone(mc: ModelConfig, path: str):
    payload = ckpt.load_checkpoint(path, expect_kind="backbone")
    backbone = build_backbone(mc.backbone_config(), mc.init_seed)
    backbone.load_state_dict(payload["state"])
    return backbone


def run_stage0(mc: ModelConfig, plan: StagePlan, out_dir: str,
               resume: bool = False) -> StageResult:
    """Pretrain the backbone on the moving-shapes corpus (captions on).

    Runs the two-phase timestep curriculum: a low-timestep phase with the
    clean clip appended as a context stream (forming the attend-into-clean-
    condition-tokens circuit), then full-range training with occluded context
    on most batches (see masked_context and the curriculum constants above).
    """
    codec, schedule = build_runtime(mc)
    backbone = build_backbone(mc.backbone_config(), mc.init_seed)
    np_rng = np.random.default_rng(np.random.SeedSequence([plan.seed, 0]))
    phase_a_steps = int(STAGE0_PHASE_A_FRAC * plan.steps)

    def step_fn(rng, gen, step):
        videos, cap_ids = shapes_batch(rng, plan.batch_size, mc.window_frames,
                                       mc.height, mc.width)
        b = plan.batch_size
        if step < phase_a_steps:
            t = torch.full((b,), STAGE0_PHASE_A_T)
            context = videos
            x0_weight = 0.0
        else:
            t_full = torch.randint(1, mc.t_max + 1, (b,), generator=gen)
            t_low = torch.randint(1, STAGE0_LOW_T_MAX + 1, (b,), generator=gen)
            low = torch.rand(b, generator=gen) < STAGE0_LOW_T_P
            t = torch.where(low, t_low, t_full)
            r = rng.random()
            if r < STAGE0_CTX_FULL_P:
                context = videos
            elif r < STAGE0_CTX_FULL_P + STAGE0_CTX_MASKED_P:
                context = masked_context(videos, rng)
            else:
                context = None
            x0_weight = STAGE0_X0_WEIGHT
        loss, _ = dif.loss_domain(backbone, codec, schedule, videos, cap_ids,
                                  None, gen, context_frames=context, t=t,
                                  x0_weight=x0_weight)
        return loss

    steps, final_loss, csv_path = _run_loop(
        plan, out_dir, backbone, {}, step_fn, np_rng, resume)
    path = os.path.join(out_dir, "backbone.pt")
    ckpt.save_checkpoint(path, "backbone", mc, backbone.state_dict(),
                         step=steps, extra={"stage": 0})
    return StageResult(path, csv_path, steps, final_loss)


def _dataset_step_inputs(loader: BatchLoader, rng, batch_size: int,
                         clip_len: int):
    quads = loader.sample(batch_size, clip_len, rng)
    videos = np.stack([q.video for q in quads])
    cap_ids = torch.tensor(
        np.stack([captions.encode_caption(q.caption) for q in quads]))
    pose = np.stack([q.pose_cond for q in quads])
    hair = np.stack([q.hair_cond for q in quads])
    return videos, cap_ids, pose, hair


def run_stage1(mc: ModelConfig, plan: StagePlan, data_root: str,
               backbone_ckpt: str, out_dir: str,
               resume: bool = False) -> StageResult:
    """Train only the domain adapter; the backbone stays frozen."""
    codec, schedule = build_runtime(mc)
    backbone = load_backbone(mc, backbone_ckpt)
    frozen = {"backbone": (backbone, _freeze(backbone))}
    domain = build_domain_adapter(mc.n_blocks, mc.d_model, mc.rank_domain,
                                  plan.seed)
    loader = BatchLoader(data_root, split="train")
    np_rng = np.random.default_rng(np.random.SeedSequence([plan.seed, 1]))

    def step_fn(rng, gen, step):
        videos, cap_ids, _, _ = _dataset_step_inputs(
            loader, rng, plan.batch_size, mc.window_frames)
        loss, _ = dif.loss_domain(backbone, codec, schedule, videos, cap_ids,
                                  domain, gen)
        return loss

    steps, final_loss, csv_path = _run_loop(
        plan, out_dir, domain, frozen, step_fn, np_rng, resume)
    path = os.path.join(out_dir, "domain.pt")
    ckpt.save_checkpoint(path, "domain", mc, domain.state_dict(), step=steps,
                         backbone_digest=ckpt.module_digest(backbone),
                         extra={"stage": 1})
    return StageResult(path, csv_path, steps, final_loss)


def run_stage2(mc: ModelConfig, plan: StagePlan, data_root: str,
               backbone_ckpt: str, domain_ckpt: str | None, out_dir: str,
               resume: bool = False) -> StageResult:
    """Train only the motion adapter; backbone and domain adapter frozen.

    Passing domain_ckpt=None requires plan.no_domain_lora (the ablation that
    drops the domain adapter from training entirely).
    """
    if domain_ckpt is None and not plan.no_domain_lora:
        raise ValidationError(
            "stage 2 needs a stage-1 domain checkpoint; pass the ablation "
            "flag to train without one")
    if domain_ckpt is not None and plan.no_domain_lora:
        raise ValidationError(
            "ablation run must not load a domain checkpoint")
    codec, schedule = build_runtime(mc)
    backbone = load_backbone(mc, backbone_ckpt)
    frozen = {"backbone": (backbone, _freeze(backbone))}

    domain = None
    if domain_ckpt is not None:
        payload = ckpt.load_checkpoint(domain_ckpt, expect_kind="domain")
        ckpt.check_backbone_match(payload, backbone, domain_ckpt)
        domain = build_domain_adapter(mc.n_blocks, mc.d_model, mc.rank_domain,
                                      plan.seed)
        domain.load_state_dict(payload["state"])
        frozen["domain"] = (domain, _freeze(domain))

    motion = build_motion_adapter(mc.n_blocks, mc.d_model, codec,
                                  mc.rank_motion, plan.seed)
    loader = BatchLoader(data_root, split="train")
    np_rng = np.random.default_rng(np.random.SeedSequence([plan.seed, 2]))

    def step_fn(rng, gen, step):
        videos, _, pose, hair = _dataset_step_inputs(
            loader, rng, plan.batch_size, mc.window_frames)
        loss, _ = dif.loss_motion(backbone, codec, schedule, videos, pose,
                                  hair, domain, motion, gen,
                                  cond_dropout=plan.cond_dropout)
        return loss

    steps, final_loss, csv_path = _run_loop(
        plan, out_dir, motion, frozen, step_fn, np_rng, resume)
    path = os.path.join(out_dir, "motion.pt")
    ckpt.save_checkpoint(path, "motion", mc, motion.state_dict(), step=steps,
                         backbone_digest=ckpt.module_digest(backbone),
                         extra={"stage": 2,
                                "no_domain_lora": plan.no_domain_lora,
                                "domain_digest": (None if domain is None else
                                                  ckpt.module_digest(domain))})
    return StageResult(path, csv_path, steps, final_loss)


def ema_smooth(values, window: int = 50) -> list[float]:
    """Exponential moving average used to judge loss trends."""
    alpha = 2.0 / (window + 1)
    out = []
    acc = None
    for v in values:
        acc = v if acc is None else alpha * v + (1 - alpha) * acc
        out.append(acc)
    return out
