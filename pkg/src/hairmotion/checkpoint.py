"""Checkpoint files with content hashes for freeze auditing.

Every checkpoint stores a sha256 digest per state dict. Loading re-hashes
and compares, so silent corruption or accidental in-place edits surface as
hard errors. Adapter checkpoints additionally pin the digest of the backbone
they were trained against; loading them next to a different backbone fails.
"""

from __future__ import annotations

import hashlib

import torch
import torch.nn as nn

from .config import ModelConfig
from .errors import AuditError, ValidationError

FORMAT_VERSION = 1
KINDS = ("backbone", "domain", "motion")


def tensor_digest(t: torch.Tensor) -> str:
    t = t.detach().cpu().contiguous()
    h = hashlib.sha256()
    h.update(str(t.dtype).encode())
    h.update(str(tuple(t.shape)).encode())
    h.update(t.numpy().tobytes())
    return h.hexdigest()


def state_digest(state: dict) -> str:
    """Order-independent digest of a state dict."""
    h = hashlib.sha256()
    for key in sorted(state):
        h.update(key.encode())
        h.update(tensor_digest(state[key]).encode())
    return h.hexdigest()


def module_digest(module: nn.Module) -> str:
    return state_digest(module.state_dict())


def save_checkpoint(path: str, kind: str, model_config: ModelConfig,
                    state: dict, step: int = 0,
                    backbone_digest: str | None = None,
                    extra: dict | None = None):
    if kind not in KINDS:
        raise ValidationError(f"unknown checkpoint kind {kind!r}")
    if kind != "backbone" and backbone_digest is None:
        raise ValidationError("adapter checkpoints must pin a backbone digest")
    payload = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "model_config": model_config.to_dict(),
        "state": {k: v.detach().cpu() for k, v in state.items()},
        "digest": state_digest(state),
        "backbone_digest": backbone_digest,
        "step": step,
        "extra": extra or {},
    }
    torch.save(payload, path)


def load_checkpoint(path: str, expect_kind: str | None = None) -> dict:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise ValidationError(f"checkpoint not found: {path}")
    except Exception as e:
        raise ValidationError(f"cannot read checkpoint {path}: {e}")
    if not isinstance(payload, dict) or payload.get("format_version") != FORMAT_VERSION:
        raise ValidationError(f"{path} is not a recognized checkpoint")
    if expect_kind is not None and payload["kind"] != expect_kind:
        raise ValidationError(
            f"{path} holds a {payload['kind']!r} checkpoint, expected {expect_kind!r}")
    if state_digest(payload["state"]) != payload["digest"]:
        raise AuditError(f"checkpoint {path} failed its content hash check")
    payload["model_config"] = ModelConfig.from_dict(payload["model_config"])
    return payload


def check_backbone_match(payload: dict, backbone: nn.Module, path: str = "?"):
    """Adapter checkpoints must be applied to the exact backbone they saw."""
    want = payload.get("backbone_digest")
    if want is None:
        raise ValidationError(f"{path} does not pin a backbone digest")
    have = module_digest(backbone)
    if have != want:
        raise AuditError(
            f"adapter checkpoint {path} was trained against a different "
            f"backbone (digest {want[:12]}.. vs {have[:12]}..)")
