import numpy as np
import pytest

from hairmotion import metrics as mx
from hairmotion.data import DatasetConfig, generate_dataset, read_clip, Manifest
from hairmotion.errors import ValidationError


def frames(rng, t=2, h=16, w=16):
    return rng.integers(0, 256, (t, h, w, 3), dtype=np.uint8)


# -- SSIM ---------------------------------------------------------------------

def oracle_ssim(a, b):
    """Direct windowed evaluation of the Wang-2004 formula, one frame."""
    n = 11
    sigma = 1.5
    g = np.exp(-((np.arange(n) - (n - 1) / 2) ** 2) / (2 * sigma ** 2))
    g = g / g.sum()
    kern = np.outer(g, g)
    c1 = (0.01 * 255) ** 2
    c2 = (0.03 * 255) ** 2
    r = n // 2
    vals = []
    for ch in range(a.shape[-1]):
        x = np.pad(a[..., ch].astype(np.float64), r, mode="symmetric")
        y = np.pad(b[..., ch].astype(np.float64), r, mode="symmetric")
        m = np.zeros(a.shape[:2])
        for i in range(a.shape[0]):
            for j in range(a.shape[1]):
                wx = x[i:i + n, j:j + n]
                wy = y[i:i + n, j:j + n]
                mx_ = (kern * wx).sum()
                my = (kern * wy).sum()
                vx = (kern * wx * wx).sum() - mx_ ** 2
                vy = (kern * wy * wy).sum() - my ** 2
                cov = (kern * wx * wy).sum() - mx_ * my
                m[i, j] = (((2 * mx_ * my + c1) * (2 * cov + c2))
                           / ((mx_ ** 2 + my ** 2 + c1) * (vx + vy + c2)))
        vals.append(m.mean())
    return float(np.mean(vals))


def test_ssim_matches_direct_formula_oracle():
    rng = np.random.default_rng(0)
    a = rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)
    b = rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)
    assert abs(mx.ssim(a, b) - oracle_ssim(a, b)) < 1e-4


def test_ssim_identity_is_one():
    rng = np.random.default_rng(1)
    a = frames(rng)
    assert mx.ssim(a, a) == 1.0


def test_ssim_anticorrelated_negative():
    rng = np.random.default_rng(2)
    a = frames(rng, t=1)
    assert mx.ssim(a, 255 - a) < 0


def test_ssim_symmetric():
    rng = np.random.default_rng(3)
    a, b = frames(rng, t=1), frames(rng, t=1)
    assert abs(mx.ssim(a, b) - mx.ssim(b, a)) < 1e-9


def test_ssim_full_mask_equals_unmasked():
    rng = np.random.default_rng(4)
    a, b = frames(rng), frames(rng)
    mask = np.ones(a.shape[:3], bool)
    assert abs(mx.ssim(a, b, mask) - mx.ssim(a, b)) < 1e-9


def test_ssim_empty_mask_absent():
    rng = np.random.default_rng(5)
    a, b = frames(rng), frames(rng)
    assert mx.ssim(a, b, np.zeros(a.shape[:3], bool)) is None


def test_ssim_dim_mismatch():
    with pytest.raises(ValidationError):
        mx.ssim(np.zeros((8, 8, 3), np.uint8), np.zeros((8, 9, 3), np.uint8))


# -- PSNR / L1 ----------------------------------------------------------------

def test_psnr_uniform_one_level():
    a = np.full((8, 8, 3), 100, np.uint8)
    b = np.full((8, 8, 3), 101, np.uint8)
    assert abs(mx.psnr(a, b) - 10 * np.log10(65025)) < 0.01  # 48.13 dB


def test_psnr_identity_sentinel():
    a = np.full((8, 8, 3), 7, np.uint8)
    assert mx.psnr(a, a.copy()) == 99.0


def test_psnr_mask_contract():
    # mask covering only identical pixels hits the sentinel regardless of
    # differences outside
    a = np.zeros((8, 8, 3), np.uint8)
    b = a.copy()
    b[:4] = 200
    mask = np.zeros((8, 8), bool)
    mask[6:] = True
    assert mx.psnr(a, b, mask) == 99.0
    assert mx.psnr(a, b) < 99.0


def test_psnr_monotone_in_mse():
    a = np.zeros((8, 8, 3), np.uint8)
    assert mx.psnr(a, a + 1) > mx.psnr(a, a + 2) > mx.psnr(a, a + 10)


def test_l1_scale_and_triangle():
    a = np.zeros((4, 4, 3), np.uint8)
    b = np.full((4, 4, 3), 255, np.uint8)
    c = np.full((4, 4, 3), 100, np.uint8)
    assert mx.l1(a, b) == 1.0
    assert mx.l1(a, a) == 0.0
    assert mx.l1(a, b) <= mx.l1(a, c) + mx.l1(c, b) + 1e-12


# -- Fréchet proxy --------------------------------------------------------------

def test_frechet_identity_zero():
    rng = np.random.default_rng(6)
    vids = [frames(rng) for _ in range(3)]
    assert mx.frechet_proxy(vids, [v.copy() for v in vids]) < 1e-6


def test_frechet_symmetric():
    rng = np.random.default_rng(7)
    a = [frames(rng) for _ in range(3)]
    b = [frames(rng) for _ in range(3)]
    d1 = mx.frechet_proxy(a, b)
    d2 = mx.frechet_proxy(b, a)
    assert d1 > 0
    assert abs(d1 - d2) < 1e-6 * max(d1, 1.0)


def test_frechet_ordering():
    rng = np.random.default_rng(8)
    gt = [frames(rng, t=4) for _ in range(4)]
    jitter = [np.clip(v.astype(int) + rng.integers(-2, 3, v.shape), 0, 255)
              .astype(np.uint8) for v in gt]
    noise = [frames(rng, t=4) for _ in range(4)]
    assert mx.frechet_proxy(gt, noise) > mx.frechet_proxy(gt, jitter)


def test_frechet_needs_two_videos():
    rng = np.random.default_rng(9)
    with pytest.raises(ValidationError):
        mx.frechet_proxy([frames(rng)], [frames(rng), frames(rng)])


# -- evaluate -------------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    root = str(tmp_path_factory.mktemp("data"))
    cfg = DatasetConfig(n_clips=4, frames=5, height=32, width=32,
                        min_strands=3, max_strands=5, seed=11,
                        train_fraction=0.5, downsample_factor=8)
    generate_dataset(cfg, root)
    return root


def write_preds(pred_root, data_root, ids, mutate=None):
    import os
    import cv2
    for cid in ids:
        clip = read_clip(data_root, cid)
        d = os.path.join(pred_root, cid)
        os.makedirs(d, exist_ok=True)
        video = clip.video if mutate is None else mutate(clip.video)
        for i, fr in enumerate(video):
            cv2.imwrite(os.path.join(d, f"{i:05d}.png"),
                        cv2.cvtColor(fr, cv2.COLOR_RGB2BGR))


def test_evaluate_ground_truth_is_perfect(tiny_dataset, tmp_path):
    ids = Manifest.load(tiny_dataset).clip_ids("test")
    pred = str(tmp_path / "pred")
    write_preds(pred, tiny_dataset, ids)
    report = mx.evaluate(pred, tiny_dataset, "test")
    agg = report["aggregate"]
    assert agg["ssim"] == 1.0 and agg["l1"] == 0.0
    assert agg["psnr_db"] == 99.0 and agg["psnr_hair_db"] == 99.0
    assert report["proxy_frechet"] < 1e-6
    assert {r["id"] for r in report["clips"]} == set(ids)


def test_evaluate_missing_clip_listed(tiny_dataset, tmp_path):
    ids = Manifest.load(tiny_dataset).clip_ids("test")
    pred = str(tmp_path / "pred")
    write_preds(pred, tiny_dataset, ids[:-1])
    with pytest.raises(ValidationError, match=ids[-1]):
        mx.evaluate(pred, tiny_dataset, "test")


def test_evaluate_shuffled_pairing_worse(tiny_dataset, tmp_path):
    ids = Manifest.load(tiny_dataset).clip_ids("test")
    assert len(ids) >= 2
    good = str(tmp_path / "good")
    write_preds(good, tiny_dataset, ids)
    bad = str(tmp_path / "bad")
    # pair each clip with the next clip's video
    import os
    import shutil
    os.makedirs(bad)
    for i, cid in enumerate(ids):
        shutil.copytree(os.path.join(good, ids[(i + 1) % len(ids)]),
                        os.path.join(bad, cid))
    r_good = mx.evaluate(good, tiny_dataset, "test")
    r_bad = mx.evaluate(bad, tiny_dataset, "test")
    assert r_good["aggregate"]["ssim"] > r_bad["aggregate"]["ssim"]


def test_report_schema_and_table(tiny_dataset, tmp_path):
    ids = Manifest.load(tiny_dataset).clip_ids("test")
    pred = str(tmp_path / "pred")
    write_preds(pred, tiny_dataset, ids,
                mutate=lambda v: np.clip(v.astype(int) + 3, 0, 255).astype(np.uint8))
    report = mx.evaluate(pred, tiny_dataset, "test")
    for row in report["clips"]:
        assert set(row) == {"id", "ssim", "psnr_db", "l1",
                            "ssim_hair", "psnr_hair_db", "l1_hair"}
    table = mx.format_report(report)
    assert "ssim_hair" in table and "mean" in table
    mx.write_report(report, str(tmp_path / "out"))
    import json
    with open(tmp_path / "out" / "report.json") as f:
        assert json.load(f)["aggregate"]["ssim"] == report["aggregate"]["ssim"]
