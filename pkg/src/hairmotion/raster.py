"""Rasterization of simulation snapshots into training-sample channels.

Four channels per frame: shaded RGB frame, pose condition (hair-free
pseudo-normal render of head/torso plus landmark discs), hair UVW condition,
and the binary hair alpha mask. Shaded frames are drawn anti-aliased; the
condition channels are stamped without anti-aliasing so their values stay
exactly interpretable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import cv2
import numpy as np

from .sim import HEAD_RADII, TORSO_RADII, WORLD_HALF, RigPose, StrandState, rot2


@dataclass
class Palette:
    seed: int = 0
    background: tuple = (24, 26, 34)
    torso_color: tuple = (70, 90, 120)
    head_color: tuple = (196, 160, 130)
    landmark_color: tuple = (240, 240, 240)
    hair_base: tuple = (150, 90, 40)
    hair_jitter: int = 45
    strand_width: int = 2

    def strand_color(self, root_uv) -> tuple:
        """Scalp-texture color: an affine function of the root UV.

        Keying the per-strand jitter on the root coordinates (not the strand
        index) means hair appearance is recoverable from the hair condition,
        whose red/green channels carry the same root UV; keeping the map
        affine keeps appearance linearly decodable from that condition.
        """
        u, v = float(root_uv[0]), float(root_uv[1])
        j = self.hair_jitter
        swing = np.array([(2 * u - 1) * j, (2 * v - 1) * j, (1 - 2 * u) * j])
        c = np.array(self.hair_base, float) + swing
        return tuple(int(x) for x in np.clip(np.round(c), 0, 255))


def world_to_px(pts: np.ndarray, height: int, width: int) -> np.ndarray:
    """Map world [-WORLD_HALF, WORLD_HALF]^2 (y-down) to pixel coordinates."""
    pts = np.atleast_2d(pts)
    out = np.empty_like(pts, dtype=float)
    out[:, 0] = (pts[:, 0] + WORLD_HALF) * width / (2 * WORLD_HALF)
    out[:, 1] = (pts[:, 1] + WORLD_HALF) * height / (2 * WORLD_HALF)
    return out


def _px_radii(radii, height, width):
    return radii[0] * width / (2 * WORLD_HALF), radii[1] * height / (2 * WORLD_HALF)


def render_shaded(strands: list[StrandState], rig: RigPose,
                  style: Palette | None = None,
                  height: int = 64, width: int = 64) -> np.ndarray:
    """Flat-shaded frame: torso, head, landmark dots, anti-aliased strands."""
    style = style or Palette()
    img = np.empty((height, width, 3), np.uint8)
    img[:] = style.background

    tc = world_to_px(rig.torso_anchor, height, width)[0]
    trx, try_ = _px_radii(TORSO_RADII, height, width)
    cv2.ellipse(img, (round(tc[0]), round(tc[1])), (round(trx), round(try_)),
                0, 0, 360, style.torso_color, -1, cv2.LINE_AA)

    hc = world_to_px(rig.head_center, height, width)[0]
    hrx, hry = _px_radii(HEAD_RADII, height, width)
    cv2.ellipse(img, (round(hc[0]), round(hc[1])), (round(hrx), round(hry)),
                np.degrees(rig.head_angle), 0, 360, style.head_color, -1, cv2.LINE_AA)

    for pt in world_to_px(rig.landmark_points, height, width):
        cv2.circle(img, (round(pt[0]), round(pt[1])), max(1, width // 64),
                   style.landmark_color, -1, cv2.LINE_AA)

    for s in strands:
        pts = world_to_px(s.particles, height, width)
        cv2.polylines(img, [np.round(pts).astype(np.int32)], False,
                      style.strand_color(s.root_uv), style.strand_width,
                      cv2.LINE_AA)
    return img


def render_pose_condition(rig: RigPose, height: int = 64, width: int = 64) -> np.ndarray:
    """Hair-free render with per-pixel pseudo-normal coloring.

    The outward 2D normal (nx, ny) maps to (red, green) = ((n+1)/2)*255 and
    blue is constant 128 on the body; background stays (0,0,0). Landmarks are
    overdrawn as single-color discs.
    """
    img = np.zeros((height, width, 3), np.uint8)
    ys, xs = np.mgrid[0:height, 0:width]
    wx = (xs + 0.5) * (2 * WORLD_HALF) / width - WORLD_HALF
    wy = (ys + 0.5) * (2 * WORLD_HALF) / height - WORLD_HALF

    def paint_ellipse(center, radii, angle):
        rot = rot2(angle)
        dx = wx - center[0]
        dy = wy - center[1]
        lx = rot[0, 0] * dx + rot[1, 0] * dy  # world -> local (R^T)
        ly = rot[0, 1] * dx + rot[1, 1] * dy
        inside = (lx / radii[0]) ** 2 + (ly / radii[1]) ** 2 <= 1.0
        # gradient of the implicit ellipse function, rotated back to world
        gx = lx / radii[0] ** 2
        gy = ly / radii[1] ** 2
        nwx = rot[0, 0] * gx + rot[0, 1] * gy
        nwy = rot[1, 0] * gx + rot[1, 1] * gy
        norm = np.hypot(nwx, nwy)
        ok = inside & (norm > 1e-12)
        img[ok, 0] = np.clip(np.round((nwx[ok] / norm[ok] + 1) * 0.5 * 255), 0, 255)
        img[ok, 1] = np.clip(np.round((nwy[ok] / norm[ok] + 1) * 0.5 * 255), 0, 255)
        img[ok, 2] = 128
        img[inside & ~ok] = (128, 128, 128)

    paint_ellipse(rig.torso_anchor, TORSO_RADII, 0.0)
    paint_ellipse(rig.head_center, HEAD_RADII, rig.head_angle)

    color = (240, 240, 240)
    r = max(1, width // 64)
    for pt in world_to_px(rig.landmark_points, height, width):
        cv2.circle(img, (round(pt[0]), round(pt[1])), r, color, -1)
    return img


def _strand_samples(s: StrandState):
    """Densely sampled points along the polyline with normalized arc length."""
    p = s.particles
    seg = np.linalg.norm(np.diff(p, axis=0), axis=1)
    total = float(seg.sum())
    if total <= 0:
        return p[:1], np.zeros(1)
    pts = []
    ws = []
    acc = 0.0
    for i in range(len(seg)):
        n = max(2, int(np.ceil(seg[i] * 400)))  # sub-pixel spacing at 64px
        t = np.linspace(0.0, 1.0, n, endpoint=(i == len(seg) - 1))
        pts.append(p[i] + t[:, None] * (p[i + 1] - p[i]))
        ws.append((acc + t * seg[i]) / total)
        acc += seg[i]
    return np.concatenate(pts), np.concatenate(ws)


def render_hair_condition(strands: list[StrandState], height: int = 64,
                          width: int = 64, strand_width: int = 2,
                          ) -> tuple[np.ndarray, np.ndarray]:
    """UVW buffer plus alpha mask.

    Red/green carry the strand's root (U,V)*255 along its whole length, blue
    carries W*255 interpolated in normalized arc length (0 at root, 1 at tip).
    Later strands overwrite earlier ones (painter's order by strand index).
    """
    uvw = np.zeros((height, width, 3), np.uint8)
    alpha = np.zeros((height, width), np.uint8)
    half = strand_width / 2.0
    for s in strands:
        pts, ws = _strand_samples(s)
        px = world_to_px(pts, height, width)
        u8 = int(round(s.root_uv[0] * 255))
        v8 = int(round(s.root_uv[1] * 255))
        for (x, y), w in zip(px, ws):
            x0 = int(np.floor(x - half + 0.5))
            y0 = int(np.floor(y - half + 0.5))
            x1 = min(x0 + strand_width, width)
            y1 = min(y0 + strand_width, height)
            x0 = max(x0, 0)
            y0 = max(y0, 0)
            if x0 >= x1 or y0 >= y1:
                continue
            uvw[y0:y1, x0:x1] = (u8, v8, int(round(w * 255)))
            alpha[y0:y1, x0:x1] = 255
        # endpoint pixels carry the exact boundary W values (0 at root,
        # 255 at tip) regardless of stamping overlap
        for pt, w8 in ((px[0], 0), (px[-1], 255)):
            x, y = int(pt[0]), int(pt[1])
            if 0 <= x < width and 0 <= y < height:
                uvw[y, x] = (u8, v8, w8)
                alpha[y, x] = 255
    return uvw, alpha


def hair_alpha_of(strands, height=64, width=64, strand_width=2) -> np.ndarray:
    return render_hair_condition(strands, height, width, strand_width)[1]
