"""Reconstruction metrics (SSIM, PSNR, L1) with hair-region masking, plus a
Fréchet distance proxy over fixed random conv features.

All metrics accept single frames (H, W, 3) or clips (T, H, W, 3) in uint8.
Masked variants average only over mask-positive pixels; frames whose mask is
empty are skipped, and a clip where every frame is empty reports the masked
value as absent (None).

The Fréchet proxy replaces pretrained-feature FID/FVD with a seeded random
feature extractor. It is useful for relative comparisons between runs only;
the absolute numbers are not comparable to anything published elsewhere.
"""

from __future__ import annotations

import json
import os

import cv2
import numpy as np
from scipy import linalg, ndimage

from .data import Manifest, read_clip
from .errors import ValidationError

PSNR_SENTINEL = 99.0
SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
FEATURE_DIM = 32
FRECHET_EPS = 1e-6


def _as_frames(a) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim == 3:
        a = a[None]
    if a.ndim != 4 or a.shape[-1] != 3:
        raise ValidationError(f"expected (T, H, W, 3) or (H, W, 3), got {a.shape}")
    return a


def _check_pair(a, b, mask):
    a = _as_frames(a)
    b = _as_frames(b)
    if a.shape != b.shape:
        raise ValidationError(f"shape mismatch: {a.shape} vs {b.shape}")
    if mask is not None:
        mask = np.asarray(mask).astype(bool)
        if mask.ndim == 2:
            mask = mask[None]
        if mask.shape != a.shape[:3]:
            raise ValidationError(f"mask shape {mask.shape} does not match frames")
    return a, b, mask


def _gauss_kernel() -> np.ndarray:
    k = cv2.getGaussianKernel(SSIM_WIN, SSIM_SIGMA)
    return (k @ k.T).astype(np.float64)


_KERNEL = _gauss_kernel()


def _filt(x: np.ndarray) -> np.ndarray:
    return ndimage.correlate(x, _KERNEL, mode="reflect")


def ssim_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-pixel SSIM map for one frame, averaged over channels."""
    c1 = (SSIM_K1 * 255.0) ** 2
    c2 = (SSIM_K2 * 255.0) ** 2
    maps = []
    for ch in range(a.shape[-1]):
        x = a[..., ch].astype(np.float64)
        y = b[..., ch].astype(np.float64)
        mu_x = _filt(x)
        mu_y = _filt(y)
        var_x = _filt(x * x) - mu_x * mu_x
        var_y = _filt(y * y) - mu_y * mu_y
        cov = _filt(x * y) - mu_x * mu_y
        num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
        den = (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
        maps.append(num / den)
    return np.mean(maps, axis=0)


def ssim(a, b, mask=None) -> float | None:
    a, b, mask = _check_pair(a, b, mask)
    vals = []
    for i in range(a.shape[0]):
        m = ssim_map(a[i], b[i])
        if mask is None:
            vals.append(float(m.mean()))
        elif mask[i].any():
            vals.append(float(m[mask[i]].mean()))
    return float(np.mean(vals)) if vals else None


def psnr(a, b, mask=None) -> float | None:
    a, b, mask = _check_pair(a, b, mask)
    diff2 = (a.astype(np.float64) - b.astype(np.float64)) ** 2
    if mask is None:
        mse = float(diff2.mean())
    else:
        if not mask.any():
            return None
        mse = float(diff2[mask].mean())
    if mse == 0.0:
        return PSNR_SENTINEL
    return min(float(10.0 * np.log10(255.0 ** 2 / mse)), PSNR_SENTINEL)


def l1(a, b, mask=None) -> float | None:
    """Mean absolute difference on a 0..1 scale."""
    a, b, mask = _check_pair(a, b, mask)
    diff = np.abs(a.astype(np.float64) - b.astype(np.float64)) / 255.0
    if mask is None:
        return float(diff.mean())
    if not mask.any():
        return None
    return float(diff[mask].mean())


# -- Fréchet proxy ------------------------------------------------------------

def _feature_weights(seed: int):
    rng = np.random.default_rng(seed)
    w1 = rng.standard_normal((16 * 16 * 3, 128)) / np.sqrt(16 * 16 * 3)
    w2 = rng.standard_normal((128, FEATURE_DIM)) / np.sqrt(128)
    return w1, w2


def video_features(video: np.ndarray, weights) -> np.ndarray:
    """One pooled feature vector per video from a fixed random projection."""
    w1, w2 = weights
    feats = []
    for frame in _as_frames(video):
        small = cv2.resize(frame, (16, 16), interpolation=cv2.INTER_AREA)
        x = small.astype(np.float64).reshape(-1) / 127.5 - 1.0
        h = np.maximum(x @ w1, 0.0)
        feats.append(h @ w2)
    return np.mean(feats, axis=0)


def frechet_proxy(set_a, set_b, feature_seed: int = 0) -> float:
    """Fréchet distance between Gaussian fits of random-feature summaries."""
    if len(set_a) < 2 or len(set_b) < 2:
        raise ValidationError("frechet_proxy needs at least 2 videos per set")
    weights = _feature_weights(feature_seed)
    fa = np.stack([video_features(v, weights) for v in set_a])
    fb = np.stack([video_features(v, weights) for v in set_b])
    mu_a, mu_b = fa.mean(0), fb.mean(0)
    eye = FRECHET_EPS * np.eye(FEATURE_DIM)
    cov_a = np.cov(fa, rowvar=False) + eye
    cov_b = np.cov(fb, rowvar=False) + eye
    covmean = linalg.sqrtm(cov_a @ cov_b)
    if np.iscomplexobj(covmean):
        covmean = covmean.real
    d2 = (np.sum((mu_a - mu_b) ** 2)
          + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(covmean))
    return float(max(d2, 0.0))


# -- dataset-level evaluation -------------------------------------------------

def read_pred_frames(pred_root: str, clip_id: str) -> np.ndarray | None:
    clip_dir = os.path.join(pred_root, clip_id)
    if not os.path.isdir(clip_dir):
        return None
    names = sorted(n for n in os.listdir(clip_dir) if n.endswith(".png"))
    if not names:
        return None
    frames = [cv2.cvtColor(cv2.imread(os.path.join(clip_dir, n)),
                           cv2.COLOR_BGR2RGB) for n in names]
    return np.stack(frames)


def evaluate(pred_root: str, data_root: str, split: str = "test",
             feature_seed: int = 0) -> dict:
    """Compare generated clips against ground truth for one dataset split."""
    manifest = Manifest.load(data_root)
    clip_ids = manifest.clip_ids(split)
    if not clip_ids:
        raise ValidationError(f"split {split!r} holds no clips")

    missing = [cid for cid in clip_ids
               if read_pred_frames(pred_root, cid) is None]
    if missing:
        raise ValidationError(f"missing predictions for clips: {missing}")

    rows = []
    pred_videos = []
    gt_videos = []
    for cid in clip_ids:
        pred = read_pred_frames(pred_root, cid)
        gt = read_clip(data_root, cid)
        n = min(pred.shape[0], gt.video.shape[0])
        if pred.shape[1:] != gt.video.shape[1:]:
            raise ValidationError(f"clip {cid}: prediction resolution mismatch")
        p, g = pred[:n], gt.video[:n]
        mask = gt.alpha[:n] > 0
        rows.append({
            "id": cid,
            "ssim": ssim(p, g),
            "psnr_db": psnr(p, g),
            "l1": l1(p, g),
            "ssim_hair": ssim(p, g, mask),
            "psnr_hair_db": psnr(p, g, mask),
            "l1_hair": l1(p, g, mask),
        })
        pred_videos.append(p)
        gt_videos.append(g)

    keys = ["ssim", "psnr_db", "l1", "ssim_hair", "psnr_hair_db", "l1_hair"]
    aggregate = {}
    for k in keys:
        vals = [r[k] for r in rows if r[k] is not None]
        aggregate[k] = float(np.mean(vals)) if vals else None

    proxy = (frechet_proxy(pred_videos, gt_videos, feature_seed)
             if len(clip_ids) >= 2 else None)
    return {
        "clips": rows,
        "aggregate": aggregate,
        "proxy_frechet": proxy,
        "config": {"split": split, "feature_seed": feature_seed,
                   "n_clips": len(clip_ids)},
    }


def format_report(report: dict) -> str:
    keys = ["ssim", "psnr_db", "l1", "ssim_hair", "psnr_hair_db", "l1_hair"]
    header = f"{'clip':<14}" + "".join(f"{k:>14}" for k in keys)
    lines = [header, "-" * len(header)]

    def fmt(v):
        return f"{v:>14.4f}" if v is not None else f"{'-':>14}"

    for row in report["clips"]:
        lines.append(f"{row['id']:<14}" + "".join(fmt(row[k]) for k in keys))
    lines.append("-" * len(header))
    lines.append(f"{'mean':<14}"
                 + "".join(fmt(report["aggregate"][k]) for k in keys))
    proxy = report["proxy_frechet"]
    lines.append(f"proxy frechet: {proxy:.6f}" if proxy is not None
                 else "proxy frechet: - (needs >= 2 clips)")
    return "\n".join(lines)


def write_report(report: dict, out_dir: str):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w") as f:
        json.dump(report, f, indent=1, sort_keys=True)
    with open(os.path.join(out_dir, "report.txt"), "w") as f:
        f.write(format_report(report) + "\n")
