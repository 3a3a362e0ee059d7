"""On-disk quadruplet dataset: writing, reading, validation, batch loading.

Clip layout: <root>/<clip_id>/{video,pose,hair,alpha}/%05d.png + meta.json.
The manifest is a single JSON file at the dataset root.
"""

from __future__ import annotations

import json
import os
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from PIL import Image

from . import captions, raster, sim
from .errors import ValidationError

MANIFEST_NAME = "manifest.json"
CHANNELS = ("video", "pose", "hair", "alpha")


@dataclass
class Quadruplet:
    clip_id: str
    video: np.ndarray      # (T, H, W, 3) uint8
    pose_cond: np.ndarray  # (T, H, W, 3) uint8
    hair_cond: np.ndarray  # (T, H, W, 3) uint8
    alpha: np.ndarray      # (T, H, W) uint8, binary 0/255
    caption: str
    fps: float = 30.0
    seed: int = 0

    @property
    def ref_image(self) -> np.ndarray:
        """Appearance condition: the first frame of the video."""
        return self.video[0]

    @property
    def n_frames(self) -> int:
        return self.video.shape[0]

    def validate(self):
        t, h, w, _ = self.video.shape
        for name in ("pose_cond", "hair_cond"):
            arr = getattr(self, name)
            if arr.shape != (t, h, w, 3):
                raise ValidationError(f"{name} shape {arr.shape} mismatches video {self.video.shape}")
        if self.alpha.shape != (t, h, w):
            raise ValidationError("alpha shape mismatches video")
        if not np.array_equal(self.ref_image, self.video[0]):
            raise ValidationError("ref_image must equal video[0]")

    def window(self, start: int, length: int) -> "Quadruplet":
        if start < 0 or start + length > self.n_frames:
            raise ValidationError("window out of range")
        sl = slice(start, start + length)
        return Quadruplet(clip_id=self.clip_id, video=self.video[sl],
                          pose_cond=self.pose_cond[sl], hair_cond=self.hair_cond[sl],
                          alpha=self.alpha[sl], caption=self.caption,
                          fps=self.fps, seed=self.seed)


def _save_png(path: str, arr: np.ndarray):
    Image.fromarray(arr).save(path, format="PNG")


def write_clip(quad: Quadruplet, root: str, overwrite: bool = False) -> str:
    """Atomic clip write: temp directory + rename."""
    quad.validate()
    dst = os.path.join(root, quad.clip_id)
    if os.path.exists(dst):
        if not overwrite:
            raise ValidationError(f"clip '{quad.clip_id}' already exists under {root}")
        shutil.rmtree(dst)
    os.makedirs(root, exist_ok=True)
    tmp = os.path.join(root, f".tmp-{quad.clip_id}")
    if os.path.exists(tmp):
        shutil.rmtree(tmp)
    t, h, w, _ = quad.video.shape
    try:
        for ch in CHANNELS:
            os.makedirs(os.path.join(tmp, ch))
        for i in range(t):
            _save_png(os.path.join(tmp, "video", f"{i:05d}.png"), quad.video[i])
            _save_png(os.path.join(tmp, "pose", f"{i:05d}.png"), quad.pose_cond[i])
            _save_png(os.path.join(tmp, "hair", f"{i:05d}.png"), quad.hair_cond[i])
            _save_png(os.path.join(tmp, "alpha", f"{i:05d}.png"), quad.alpha[i])
        meta = {"clip_id": quad.clip_id, "caption": quad.caption, "fps": quad.fps,
                "seed": quad.seed, "frames": t, "height": h, "width": w}
        with open(os.path.join(tmp, "meta.json"), "w") as f:
            json.dump(meta, f, indent=1)
        os.replace(tmp, dst)
    finally:
        if os.path.exists(tmp):
            shutil.rmtree(tmp)
    return dst


def read_clip(root: str, clip_id: str) -> Quadruplet:
    base = os.path.join(root, clip_id)
    try:
        with open(os.path.join(base, "meta.json")) as f:
            meta = json.load(f)
    except FileNotFoundError:
        raise ValidationError(f"clip '{clip_id}' not found under {root}")
    t = meta["frames"]

    def load(ch):
        frames = [np.asarray(Image.open(os.path.join(base, ch, f"{i:05d}.png")))
                  for i in range(t)]
        return np.stack(frames)

    return Quadruplet(clip_id=meta["clip_id"], video=load("video"),
                      pose_cond=load("pose"), hair_cond=load("hair"),
                      alpha=load("alpha"), caption=meta["caption"],
                      fps=meta["fps"], seed=meta["seed"])


@dataclass
class Manifest:
    version: str = "1"
    clips: list = field(default_factory=list)  # dicts: clip_id/split/frames/height/width/seed

    def clip_ids(self, split: str | None = None) -> list[str]:
        return [c["clip_id"] for c in self.clips if split is None or c["split"] == split]

    def save(self, root: str):
        with open(os.path.join(root, MANIFEST_NAME), "w") as f:
            json.dump({"version": self.version, "clips": self.clips}, f, indent=1)

    @classmethod
    def load(cls, root: str) -> "Manifest":
        path = os.path.join(root, MANIFEST_NAME)
        if not os.path.exists(path):
            raise ValidationError(f"no manifest at {path}")
        with open(path) as f:
            d = json.load(f)
        return cls(version=d["version"], clips=d["clips"])

    def validate(self, root: str):
        ids = self.clip_ids()
        if len(set(ids)) != len(ids):
            raise ValidationError("manifest clip_ids are not unique")
        for c in self.clips:
            quad = read_clip(root, c["clip_id"])
            quad.validate()
            t, h, w, _ = quad.video.shape
            if (t, h, w) != (c["frames"], c["height"], c["width"]):
                raise ValidationError(f"clip '{c['clip_id']}' does not match manifest entry")


@dataclass
class DatasetConfig:
    n_clips: int = 64
    frames: int = 33
    height: int = 64
    width: int = 64
    fps: float = 30.0
    min_strands: int = 8
    max_strands: int = 14
    segments_per_strand: int = 10
    strand_length: float = 1.3
    solver_iters: int = 20
    seed: int = 0
    train_fraction: float = 0.875
    downsample_factor: int = 8  # codec spatial factor x patch width

    def validate(self):
        if self.n_clips < 1 or self.frames < 1:
            raise ValidationError("n_clips and frames must be >= 1")
        if self.height % self.downsample_factor or self.width % self.downsample_factor:
            raise ValidationError(
                f"resolution {self.height}x{self.width} not divisible by "
                f"downsample factor {self.downsample_factor}")
        if not (0.0 < self.train_fraction <= 1.0):
            raise ValidationError("train_fraction must lie in (0, 1]")


def build_clip(config: DatasetConfig, index: int) -> Quadruplet:
    """Simulate and rasterize one clip; a pure function of (config, index)."""
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, index]))
    n_strands = int(rng.integers(config.min_strands, config.max_strands + 1))
    groom_seed = int(rng.integers(2 ** 31))
    script = sim.sample_script(rng, config.frames, config.fps)
    snaps = sim.run_clip(groom_seed, n_strands, config.segments_per_strand,
                         config.strand_length, script,
                         dt=1.0 / config.fps, solver_iters=config.solver_iters)
    h, w = config.height, config.width
    style = raster.Palette(seed=groom_seed)
    video, pose, hair, alpha = [], [], [], []
    for strands, rig in snaps:
        video.append(raster.render_shaded(strands, rig, style, h, w))
        pose.append(raster.render_pose_condition(rig, h, w))
        uvw, a = raster.render_hair_condition(strands, h, w)
        hair.append(uvw)
        alpha.append(a)
    return Quadruplet(
        clip_id=f"clip{index:04d}",
        video=np.stack(video), pose_cond=np.stack(pose),
        hair_cond=np.stack(hair), alpha=np.stack(alpha),
        caption=captions.strand_caption(n_strands, script.name),
        fps=config.fps, seed=groom_seed)


def _build_and_write(args):
    config, index, root, overwrite = args
    quad = build_clip(config, index)
    write_clip(quad, root, overwrite=overwrite)
    return quad.clip_id, quad.seed


def generate_dataset(config: DatasetConfig, root: str, jobs: int = 1,
                     overwrite: bool = False) -> Manifest:
    config.validate()
    tasks = [(config, i, root, overwrite) for i in range(config.n_clips)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_build_and_write, tasks))
    else:
        results = [_build_and_write(t) for t in tasks]

    split_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 10 ** 9]))
    order = split_rng.permutation(config.n_clips)
    n_train = max(1, int(round(config.n_clips * config.train_fraction)))
    train_idx = set(order[:n_train].tolist())
    manifest = Manifest(clips=[
        {"clip_id": cid, "split": "train" if i in train_idx else "test",
         "frames": config.frames, "height": config.height, "width": config.width,
         "seed": seed}
        for i, (cid, seed) in enumerate(results)])
    manifest.save(root)
    return manifest


class BatchLoader:
    """Window-cropping batch sampler over a stored dataset split.

    Clips are cached in memory after first read; sampling is uniform with
    replacement and deterministic given the generator state.
    """

    def __init__(self, root: str, manifest: Manifest | None = None,
                 split: str = "train"):
        self.root = root
        self.manifest = manifest or Manifest.load(root)
        self.ids = self.manifest.clip_ids(split)
        if not self.ids:
            raise ValidationError(f"split '{split}' is empty")
        self._cache: dict[str, Quadruplet] = {}

    def clip(self, clip_id: str) -> Quadruplet:
        if clip_id not in self._cache:
            self._cache[clip_id] = read_clip(self.root, clip_id)
        return self._cache[clip_id]

    def sample(self, batch_size: int, clip_len: int,
               rng: np.random.Generator) -> list[Quadruplet]:
        batch = []
        for _ in range(batch_size):
            quad = self.clip(self.ids[int(rng.integers(len(self.ids)))])
            if clip_len > quad.n_frames:
                raise ValidationError(
                    f"clip_len {clip_len} exceeds stored frames {quad.n_frames}")
            start = int(rng.integers(quad.n_frames - clip_len + 1))
            batch.append(quad.window(start, clip_len))
        return batch


def load_batch(root: str, split: str, batch_size: int, clip_len: int,
               seed: int) -> list[Quadruplet]:
    """One-shot deterministic batch draw (see BatchLoader for repeated use)."""
    loader = BatchLoader(root, split=split)
    return loader.sample(batch_size, clip_len, np.random.default_rng(seed))


def dataset_config_from_dict(d: dict) -> DatasetConfig:
    known = {f for f in DatasetConfig.__dataclass_fields__}
    unknown = set(d) - known
    if unknown:
        raise ValidationError(f"unknown dataset config keys: {sorted(unknown)}")
    return DatasetConfig(**d)
