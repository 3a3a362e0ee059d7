import pytest
import torch

from hairmotion import checkpoint as ckpt
from hairmotion.backbone import build_backbone
from hairmotion.config import ModelConfig
from hairmotion.errors import AuditError, ValidationError

MC = ModelConfig(d_model=32, n_blocks=2, n_heads=2, patch=(2, 2, 2),
                 window_frames=4, height=16, width=16, t_max=50)


def test_tensor_digest_sensitivity():
    a = torch.arange(6, dtype=torch.float32)
    assert ckpt.tensor_digest(a) == ckpt.tensor_digest(a.clone())
    assert ckpt.tensor_digest(a) != ckpt.tensor_digest(a + 1)
    # same bytes, different shape must not collide
    assert ckpt.tensor_digest(a.view(2, 3)) != ckpt.tensor_digest(a.view(3, 2))
    assert ckpt.tensor_digest(a) != ckpt.tensor_digest(a.to(torch.float64))


def test_state_digest_order_independent():
    s1 = {"a": torch.ones(2), "b": torch.zeros(3)}
    s2 = dict(reversed(list(s1.items())))
    assert ckpt.state_digest(s1) == ckpt.state_digest(s2)


def test_save_load_round_trip(tmp_path):
    model = build_backbone(MC.backbone_config(), seed=0)
    path = str(tmp_path / "b.pt")
    ckpt.save_checkpoint(path, "backbone", MC, model.state_dict(), step=7)
    payload = ckpt.load_checkpoint(path, expect_kind="backbone")
    assert payload["step"] == 7
    assert payload["model_config"] == MC
    restored = build_backbone(MC.backbone_config(), seed=1)
    restored.load_state_dict(payload["state"])
    assert ckpt.module_digest(restored) == ckpt.module_digest(model)


def test_kind_checks(tmp_path):
    model = build_backbone(MC.backbone_config(), seed=0)
    path = str(tmp_path / "b.pt")
    ckpt.save_checkpoint(path, "backbone", MC, model.state_dict())
    with pytest.raises(ValidationError):
        ckpt.load_checkpoint(path, expect_kind="motion")
    with pytest.raises(ValidationError):
        ckpt.save_checkpoint(path, "nonsense", MC, model.state_dict())
    with pytest.raises(ValidationError):
        # adapter kinds must pin the backbone they trained against
        ckpt.save_checkpoint(path, "domain", MC, model.state_dict())


def test_missing_file():
    with pytest.raises(ValidationError):
        ckpt.load_checkpoint("/nonexistent/ckpt.pt")


def test_tamper_detected(tmp_path):
    model = build_backbone(MC.backbone_config(), seed=0)
    path = str(tmp_path / "b.pt")
    ckpt.save_checkpoint(path, "backbone", MC, model.state_dict())
    payload = torch.load(path, map_location="cpu", weights_only=True)
    key = sorted(payload["state"])[0]
    payload["state"][key] = payload["state"][key] + 1.0
    torch.save(payload, path)
    with pytest.raises(AuditError):
        ckpt.load_checkpoint(path)


def test_backbone_pin(tmp_path):
    model = build_backbone(MC.backbone_config(), seed=0)
    other = build_backbone(MC.backbone_config(), seed=1)
    path = str(tmp_path / "d.pt")
    ckpt.save_checkpoint(path, "domain", MC, {"w": torch.ones(3)},
                         backbone_digest=ckpt.module_digest(model))
    payload = ckpt.load_checkpoint(path, expect_kind="domain")
    ckpt.check_backbone_match(payload, model, path)
    with pytest.raises(AuditError):
        ckpt.check_backbone_match(payload, other, path)
