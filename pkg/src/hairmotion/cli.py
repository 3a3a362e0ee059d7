"""Command-line entry point for the whole pipeline.

Subcommands: gen-data, pretrain, train-stage1, train-stage2, infer, eval.
Exit codes: 0 success, 1 validation error, 2 runtime error, 3 audit or
contract violation.

Environment overrides: HAIRMOTION_OUT_ROOT prefixes relative output paths,
HAIRMOTION_JOBS sets the default worker count for parallel commands.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import cv2
import numpy as np

from . import checkpoint as ckpt, config as cfg, diffusion as dif
from . import metrics as mx, training as tr
from .adapters import build_domain_adapter, build_motion_adapter
from .data import dataset_config_from_dict, generate_dataset
from .errors import (AuditError, ContractViolation, HairMotionError,
                     ValidationError)


def _out_path(path: str) -> str:
    root = os.environ.get("HAIRMOTION_OUT_ROOT")
    if root and not os.path.isabs(path):
        return os.path.join(root, path)
    return path


def _default_jobs() -> int:
    return int(os.environ.get("HAIRMOTION_JOBS", "1"))


def _load_config(path: str | None) -> dict:
    return cfg.load_json(path) if path else {}


def _model_config(file_cfg: dict) -> cfg.ModelConfig:
    return cfg.ModelConfig.from_dict(file_cfg.get("model", {}))


def _stage_plan(file_cfg: dict, stage: int, args) -> cfg.StagePlan:
    key = {0: "stage0", 1: "stage1", 2: "stage2"}[stage]
    plan = cfg.StagePlan.from_dict(file_cfg.get(key, {}), stage=stage)
    if getattr(args, "steps", None) is not None:
        plan.steps = args.steps
    if getattr(args, "seed", None) is not None:
        plan.seed = args.seed
    if getattr(args, "no_domain_lora", False):
        plan.no_domain_lora = True
    return plan


def _write_resolved(out_dir: str, command: str, payload: dict):
    os.makedirs(out_dir, exist_ok=True)
    payload = {"command": command, **payload}
    cfg.dump_json(payload, os.path.join(out_dir, "resolved_config.json"))


def _read_image(path: str) -> np.ndarray:
    img = cv2.imread(path)
    if img is None:
        raise ValidationError(f"cannot read image: {path}")
    return cv2.cvtColor(img, cv2.COLOR_BGR2RGB)


def _read_frame_dir(path: str) -> np.ndarray:
    if not os.path.isdir(path):
        raise ValidationError(f"not a directory: {path}")
    names = sorted(n for n in os.listdir(path) if n.endswith(".png"))
    if not names:
        raise ValidationError(f"no .png frames in {path}")
    return np.stack([_read_image(os.path.join(path, n)) for n in names])


# -- subcommand implementations ------------------------------------------------

def cmd_gen_data(args) -> int:
    file_cfg = _load_config(args.config)
    ds = dataset_config_from_dict(file_cfg.get("dataset", {}))
    if args.seed is not None:
        ds.seed = args.seed
    out = _out_path(args.out)
    manifest = generate_dataset(ds, out, jobs=args.jobs)
    _write_resolved(out, "gen-data",
                    {"dataset": dataclasses.asdict(ds), "jobs": args.jobs})
    print(f"wrote {len(manifest.clips)} clips to {out}")
    return 0


def cmd_pretrain(args) -> int:
    file_cfg = _load_config(args.config)
    mc = _model_config(file_cfg)
    plan = _stage_plan(file_cfg, 0, args)
    out = _out_path(args.out)
    res = tr.run_stage0(mc, plan, out, resume=args.resume)
    _write_resolved(out, "pretrain",
                    {"model": mc.to_dict(), "stage0": plan.to_dict()})
    print(f"stage 0 done: {res.steps_run} steps, final loss {res.final_loss:.4f}")
    print(f"backbone checkpoint: {res.ckpt_path}")
    return 0


def cmd_train_stage1(args) -> int:
    file_cfg = _load_config(args.config)
    mc = _model_config(file_cfg)
    plan = _stage_plan(file_cfg, 1, args)
    out = _out_path(args.out)
    res = tr.run_stage1(mc, plan, args.data, args.backbone, out,
                        resume=args.resume)
    _write_resolved(out, "train-stage1",
                    {"model": mc.to_dict(), "stage1": plan.to_dict(),
                     "data": args.data, "backbone": args.backbone})
    print(f"stage 1 done: {res.steps_run} steps, final loss {res.final_loss:.4f}")
    print(f"domain checkpoint: {res.ckpt_path}")
    return 0


def cmd_train_stage2(args) -> int:
    file_cfg = _load_config(args.config)
    mc = _model_config(file_cfg)
    plan = _stage_plan(file_cfg, 2, args)
    out = _out_path(args.out)
    res = tr.run_stage2(mc, plan, args.data, args.backbone, args.domain, out,
                        resume=args.resume)
    _write_resolved(out, "train-stage2",
                    {"model": mc.to_dict(), "stage2": plan.to_dict(),
                     "data": args.data, "backbone": args.backbone,
                     "domain": args.domain})
    print(f"stage 2 done: {res.steps_run} steps, final loss {res.final_loss:.4f}")
    print(f"motion checkpoint: {res.ckpt_path}")
    return 0


def _preview_strip(ref, pose, hair, output, path: str):
    """Animated side-by-side strip: ref | pose | hair | generated frames."""
    from PIL import Image

    n = output.shape[0]
    frames = []
    for i in range(n):
        panels = [ref]
        if pose is not None:
            panels.append(pose[min(i, pose.shape[0] - 1)])
        if hair is not None:
            panels.append(hair[min(i, hair.shape[0] - 1)])
        panels.append(output[i])
        frames.append(Image.fromarray(np.concatenate(panels, axis=1)))
    frames[0].save(path, save_all=True, append_images=frames[1:],
                   duration=120, loop=0)


def cmd_infer(args) -> int:
    motion_payload = ckpt.load_checkpoint(args.motion, expect_kind="motion")
    mc = motion_payload["model_config"]
    codec, schedule = tr.build_runtime(mc)
    backbone = tr.load_backbone(mc, args.backbone)
    backbone.requires_grad_(False)
    ckpt.check_backbone_match(motion_payload, backbone, args.motion)

    motion = build_motion_adapter(mc.n_blocks, mc.d_model, codec,
                                  mc.rank_motion, 0)
    motion.load_state_dict(motion_payload["state"])
    motion.requires_grad_(False)

    domain = None
    if args.domain is not None:
        if not args.force_domain_lora:
            raise ContractViolation(
                "the domain adapter is a training-only aid and is discarded "
                "at inference; pass --force-domain-lora to override")
        payload = ckpt.load_checkpoint(args.domain, expect_kind="domain")
        ckpt.check_backbone_match(payload, backbone, args.domain)
        domain = build_domain_adapter(mc.n_blocks, mc.d_model, mc.rank_domain, 0)
        domain.load_state_dict(payload["state"])
        domain.requires_grad_(False)

    ref = _read_image(args.ref)
    pose = _read_frame_dir(args.pose_dir) if args.pose_dir else None
    hair = _read_frame_dir(args.hair_dir) if args.hair_dir else None
    n_frames = args.frames or (pose.shape[0] if pose is not None
                               else mc.window_frames)
    for name, frames in (("pose", pose), ("hair", hair)):
        if frames is not None and frames.shape[0] < n_frames:
            raise ValidationError(
                f"{name} conditions hold {frames.shape[0]} frames, "
                f"need {n_frames}")
    if pose is not None:
        pose = pose[:n_frames]
    if hair is not None:
        hair = hair[:n_frames]
    for name, img in [("ref", ref)] + [(n, f[0]) for n, f in
                                       (("pose", pose), ("hair", hair))
                                       if f is not None]:
        if img.shape[:2] != (mc.height, mc.width):
            raise ValidationError(
                f"{name} resolution {img.shape[:2]} does not match the model "
                f"({mc.height}, {mc.width})")

    output = dif.sample(backbone, codec, schedule, ref, n_frames,
                        motion=motion, pose_frames=pose, hair_frames=hair,
                        domain=domain, allow_domain=args.force_domain_lora,
                        steps=args.steps, seed=args.seed)

    out = _out_path(args.out)
    os.makedirs(out, exist_ok=True)
    for i, frame in enumerate(output):
        cv2.imwrite(os.path.join(out, f"{i:05d}.png"),
                    cv2.cvtColor(frame, cv2.COLOR_RGB2BGR))

    # heuristic cross-conditioning label: inputs drawn from the dataset
    # layout <clip>/{video,pose,hair} share one clip directory
    sources = {os.path.dirname(os.path.dirname(os.path.abspath(args.ref)))}
    for p in (args.pose_dir, args.hair_dir):
        if p:
            sources.add(os.path.dirname(os.path.abspath(p)))
    meta = {
        "ref": args.ref, "pose_dir": args.pose_dir, "hair_dir": args.hair_dir,
        "frames": int(n_frames), "steps": args.steps, "seed": args.seed,
        "force_domain_lora": bool(args.force_domain_lora),
        "domain_ckpt": args.domain,
        "cross_conditioned": len(sources) > 1,
    }
    cfg.dump_json(meta, os.path.join(out, "metadata.json"))
    _write_resolved(out, "infer", {"model": mc.to_dict(), **meta})
    if not args.no_preview:
        _preview_strip(ref, pose, hair, output,
                       os.path.join(out, "preview.gif"))
    print(f"wrote {n_frames} frames to {out}")
    return 0


def cmd_eval(args) -> int:
    out = _out_path(args.out)
    report = mx.evaluate(args.pred_dir, args.data, split=args.split,
                         feature_seed=args.feature_seed)
    mx.write_report(report, out)
    _write_resolved(out, "eval",
                    {"pred_dir": args.pred_dir, "data": args.data,
                     "split": args.split, "feature_seed": args.feature_seed,
                     "jobs": args.jobs})
    print(mx.format_report(report))
    return 0


# -- argument parsing ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="hairmotion",
        description="strand simulation, dataset, diffusion training, "
                    "inference and evaluation")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate the quadruplet dataset")
    g.add_argument("--config", help="JSON config file (dataset section)")
    g.add_argument("--out", required=True, help="dataset output directory")
    g.add_argument("--seed", type=int, help="override dataset seed")
    g.add_argument("--jobs", type=int, default=_default_jobs())
    g.set_defaults(fn=cmd_gen_data)

    def train_common(sp):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--out", required=True, help="run output directory")
        sp.add_argument("--steps", type=int, help="override step budget")
        sp.add_argument("--seed", type=int, help="override stage seed")
        sp.add_argument("--resume", action="store_true",
                        help="resume from the run directory's saved state")

    s0 = sub.add_parser("pretrain", help="stage 0: backbone on moving shapes")
    train_common(s0)
    s0.set_defaults(fn=cmd_pretrain)

    s1 = sub.add_parser("train-stage1", help="stage 1: domain adapter")
    train_common(s1)
    s1.add_argument("--data", required=True, help="dataset root")
    s1.add_argument("--backbone", required=True, help="stage-0 checkpoint")
    s1.set_defaults(fn=cmd_train_stage1)

    s2 = sub.add_parser("train-stage2", help="stage 2: motion adapter")
    train_common(s2)
    s2.add_argument("--data", required=True, help="dataset root")
    s2.add_argument("--backbone", required=True, help="stage-0 checkpoint")
    s2.add_argument("--domain", help="stage-1 checkpoint")
    s2.add_argument("--no-domain-lora", action="store_true",
                    help="ablation: train without the domain adapter")
    s2.set_defaults(fn=cmd_train_stage2)

    i = sub.add_parser("infer", help="sample a clip from a reference image")
    i.add_argument("--backbone", required=True, help="stage-0 checkpoint")
    i.add_argument("--motion", required=True, help="stage-2 checkpoint")
    i.add_argument("--domain", help="stage-1 checkpoint (refused by default)")
    i.add_argument("--force-domain-lora", action="store_true",
                   help="debug: apply the domain adapter despite the "
                        "discard-at-inference rule")
    i.add_argument("--ref", required=True, help="reference image (png)")
    i.add_argument("--pose-dir", help="directory of pose condition frames")
    i.add_argument("--hair-dir", help="directory of hair condition frames")
    i.add_argument("--out", required=True, help="output directory")
    i.add_argument("--frames", type=int, help="frames to generate")
    i.add_argument("--steps", type=int, default=40, help="sampling steps")
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--no-preview", action="store_true",
                   help="skip the preview gif")
    i.set_defaults(fn=cmd_infer)

    e = sub.add_parser("eval", help="score generated clips against a split")
    e.add_argument("--pred-dir", required=True,
                   help="directory of per-clip prediction folders")
    e.add_argument("--data", required=True, help="dataset root")
    e.add_argument("--split", default="test")
    e.add_argument("--out", required=True, help="report output directory")
    e.add_argument("--feature-seed", type=int, default=0)
    e.add_argument("--jobs", type=int, default=_default_jobs())
    e.set_defaults(fn=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (AuditError, ContractViolation) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except HairMotionError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (OSError, RuntimeError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
