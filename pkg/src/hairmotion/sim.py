"""2D position-based dynamics for hair strands attached to a moving head rig.

World coordinates are scene units with y pointing down; the visible region is
[-WORLD_HALF, WORLD_HALF]^2. Strands are particle chains with distance
constraints solved by sequential (Gauss-Seidel) projection, root first. The
root particle is hard-attached to the scalp and has infinite mass.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import SimulationDivergedError, ValidationError

WORLD_HALF = 2.0

HEAD_RADII = (0.55, 0.65)
HEAD_CENTER_REST = (0.0, -0.35)
TORSO_RADII = (1.0, 0.9)
TORSO_ANCHOR_REST = (0.0, 1.05)

# scalp arc (head-frame ellipse angles, y-down so sin < 0 is "up")
SCALP_PHI_LO = np.pi + 0.25
SCALP_PHI_HI = 2.0 * np.pi - 0.25

DEFAULT_N_LANDMARKS = 12


def rot2(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


def landmark_offsets(k: int = DEFAULT_N_LANDMARKS) -> np.ndarray:
    """Head-frame rest offsets of the facial landmark points, shape (k, 2)."""
    ang = 2.0 * np.pi * np.arange(k) / k
    rx, ry = HEAD_RADII
    return np.stack([0.45 * rx * np.cos(ang), 0.45 * ry * np.sin(ang)], axis=1)


@dataclass
class RigPose:
    head_center: np.ndarray
    head_angle: float
    torso_anchor: np.ndarray
    landmark_points: np.ndarray  # (K, 2), world coordinates

    @classmethod
    def at_rest(cls, n_landmarks: int = DEFAULT_N_LANDMARKS) -> "RigPose":
        return cls.from_pose(np.array(HEAD_CENTER_REST), 0.0,
                             np.array(TORSO_ANCHOR_REST), n_landmarks)

    @classmethod
    def from_pose(cls, head_center: np.ndarray, head_angle: float,
                  torso_anchor: np.ndarray,
                  n_landmarks: int = DEFAULT_N_LANDMARKS) -> "RigPose":
        offs = landmark_offsets(n_landmarks)
        pts = head_center[None, :] + offs @ rot2(head_angle).T
        return cls(np.asarray(head_center, float), float(head_angle),
                   np.asarray(torso_anchor, float), pts)


@dataclass
class MotionScript:
    n_frames: int
    head_center: np.ndarray  # (n_frames, 2)
    head_angle: np.ndarray   # (n_frames,)
    wind: np.ndarray         # (n_frames, 2), scene units / s^2
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 9.8]))
    damping: float = 0.985
    torso_anchor: np.ndarray = field(default_factory=lambda: np.array(TORSO_ANCHOR_REST))
    name: str = "motion"

    def __post_init__(self):
        self.head_center = np.asarray(self.head_center, float)
        self.head_angle = np.asarray(self.head_angle, float)
        self.wind = np.asarray(self.wind, float)
        self.gravity = np.asarray(self.gravity, float)
        self.torso_anchor = np.asarray(self.torso_anchor, float)
        if self.head_center.shape != (self.n_frames, 2):
            raise ValidationError("head_center trajectory must have shape (n_frames, 2)")
        if self.head_angle.shape != (self.n_frames,):
            raise ValidationError("head_angle trajectory must have length n_frames")
        if self.wind.shape != (self.n_frames, 2):
            raise ValidationError("wind must have shape (n_frames, 2)")
        if not (0.0 < self.damping <= 1.0):
            raise ValidationError("damping must lie in (0, 1]")

    def rig_at(self, frame: int, n_landmarks: int = DEFAULT_N_LANDMARKS) -> RigPose:
        return RigPose.from_pose(self.head_center[frame], self.head_angle[frame],
                                 self.torso_anchor, n_landmarks)

    @classmethod
    def static(cls, n_frames: int, gravity=(0.0, 9.8), wind=(0.0, 0.0),
               damping: float = 0.985, name: str = "static") -> "MotionScript":
        return cls(
            n_frames=n_frames,
            head_center=np.tile(np.array(HEAD_CENTER_REST), (n_frames, 1)),
            head_angle=np.zeros(n_frames),
            wind=np.tile(np.asarray(wind, float), (n_frames, 1)),
            gravity=np.asarray(gravity, float),
            damping=damping,
            name=name,
        )

    @classmethod
    def from_json(cls, path: str) -> "MotionScript":
        """Plain key-value script config.

        Keys: frames (int), keys ({frame: {"center": [x,y], "angle": a}},
        linearly interpolated), wind ([x,y] constant or per-frame list),
        gravity ([x,y]), damping (float), name (str).
        """
        with open(path) as f:
            cfg = json.load(f)
        try:
            n = int(cfg["frames"])
            keys = {int(k): v for k, v in cfg["keys"].items()}
        except KeyError as e:
            raise ValidationError(f"script config missing key: {e}")
        if n < 1 or not keys:
            raise ValidationError("script needs frames >= 1 and at least one key")
        kf = sorted(keys)
        centers = np.zeros((n, 2))
        angles = np.zeros(n)

        def key_pose(i):
            return np.asarray(keys[kf[i]]["center"], float), float(keys[kf[i]].get("angle", 0.0))

        for t in range(n):
            if t <= kf[0]:
                centers[t], angles[t] = key_pose(0)
            elif t >= kf[-1]:
                centers[t], angles[t] = key_pose(len(kf) - 1)
            else:
                j = max(i for i in range(len(kf)) if kf[i] <= t)
                c0, a0 = key_pose(j)
                c1, a1 = key_pose(j + 1)
                w = (t - kf[j]) / (kf[j + 1] - kf[j])
                centers[t] = (1 - w) * c0 + w * c1
                angles[t] = (1 - w) * a0 + w * a1
        wind = np.asarray(cfg.get("wind", [0.0, 0.0]), float)
        if wind.ndim == 1:
            wind = np.tile(wind, (n, 1))
        return cls(n_frames=n, head_center=centers, head_angle=angles, wind=wind,
                   gravity=np.asarray(cfg.get("gravity", [0.0, 9.8]), float),
                   damping=float(cfg.get("damping", 0.985)),
                   name=str(cfg.get("name", "scripted motion")))


@dataclass
class StrandState:
    particles: np.ndarray       # (n, 2)
    prev_positions: np.ndarray  # (n, 2)
    rest_lengths: np.ndarray    # (n - 1,), all > 0
    root_uv: np.ndarray         # (2,), scalp texture coordinates in [0,1]^2
    root_offset: np.ndarray     # (2,), attachment point in the head frame

    @property
    def n_particles(self) -> int:
        return self.particles.shape[0]

    def validate(self):
        n = self.n_particles
        if n < 2:
            raise ValidationError("strand needs at least 2 particles")
        if self.rest_lengths.shape != (n - 1,) or np.any(self.rest_lengths <= 0):
            raise ValidationError("rest_lengths must be n-1 strictly positive entries")
        if np.any(self.root_uv < 0) or np.any(self.root_uv > 1):
            raise ValidationError("root_uv components must lie in [0,1]")


def _scalp_arc_table(n_samples: int = 2001):
    """Cumulative arc length along the head-frame scalp arc."""
    rx, ry = HEAD_RADII
    phi = np.linspace(SCALP_PHI_LO, SCALP_PHI_HI, n_samples)
    pts = np.stack([rx * np.cos(phi), ry * np.sin(phi)], axis=1)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    return phi, pts, cum / cum[-1]


def init_groom(seed: int, n_strands: int, segments_per_strand: int,
               strand_length: float) -> tuple[list[StrandState], RigPose]:
    """Root strands along the scalp arc and let them hang straight down.

    U is the arc-length fraction of the root along the scalp arc (with a small
    seeded jitter, less than half the inter-root spacing), V is constant 0.5.
    """
    if n_strands < 1 or segments_per_strand < 1:
        raise ValidationError("n_strands and segments_per_strand must be >= 1")
    if strand_length <= 0:
        raise ValidationError("strand_length must be > 0")
    rng = np.random.default_rng(seed)
    rig = RigPose.at_rest()
    phi_tab, pts_tab, arc_tab = _scalp_arc_table()
    seg_len = strand_length / segments_per_strand
    n_pts = segments_per_strand + 1

    strands = []
    for i in range(n_strands):
        u = (i + 0.5) / n_strands
        u = u + (rng.uniform(-0.2, 0.2) / n_strands if n_strands > 1 else 0.0)
        u = float(np.clip(u, 0.0, 1.0))
        root_local = np.array([np.interp(u, arc_tab, pts_tab[:, 0]),
                               np.interp(u, arc_tab, pts_tab[:, 1])])
        root_world = rig.head_center + rot2(rig.head_angle) @ root_local
        particles = np.tile(root_world, (n_pts, 1))
        particles[:, 1] += seg_len * np.arange(n_pts)
        strands.append(StrandState(
            particles=particles,
            prev_positions=particles.copy(),
            rest_lengths=np.full(segments_per_strand, seg_len),
            root_uv=np.array([u, 0.5]),
            root_offset=root_local,
        ))
    return strands, rig


def step(strands: list[StrandState], rig: RigPose, script: MotionScript,
         frame: int, dt: float = 1.0 / 30.0,
         solver_iters: int = 20) -> tuple[list[StrandState], RigPose]:
    """One Verlet + constraint-projection step. Pure: inputs are not mutated."""
    if frame >= script.n_frames:
        raise ValidationError(f"frame {frame} out of range for {script.n_frames}-frame script")
    if dt <= 0:
        raise ValidationError("dt must be > 0")
    if solver_iters < 1:
        raise ValidationError("solver_iters must be >= 1")

    new_rig = script.rig_at(frame, rig.landmark_points.shape[0])
    rot = rot2(new_rig.head_angle)
    accel = script.gravity + script.wind[frame]

    out = []
    for s in strands:
        p = s.particles
        attach = new_rig.head_center + rot @ s.root_offset
        new = p + (p - s.prev_positions) * script.damping + accel * dt * dt
        new[0] = attach
        for _ in range(solver_iters):
            new[0] = attach
            for i in range(s.n_particles - 1):
                d = new[i + 1] - new[i]
                dist = np.linalg.norm(d)
                if dist < 1e-12:
                    continue
                # downstream-only correction: with root-first ordering each
                # sweep restores chain lengths exactly (fastest for chains)
                new[i + 1] = new[i] + (s.rest_lengths[i] / dist) * d
        if not np.all(np.isfinite(new)):
            raise SimulationDivergedError(frame)
        out.append(StrandState(particles=new, prev_positions=p.copy(),
                               rest_lengths=s.rest_lengths.copy(),
                               root_uv=s.root_uv.copy(),
                               root_offset=s.root_offset.copy()))
    return out, new_rig


def run_clip(seed: int, n_strands: int, segments_per_strand: int,
             strand_length: float, script: MotionScript,
             dt: float = 1.0 / 30.0, solver_iters: int = 20,
             ) -> list[tuple[list[StrandState], RigPose]]:
    """Simulate a whole script; returns one (strands, rig) snapshot per frame."""
    strands, rig = init_groom(seed, n_strands, segments_per_strand, strand_length)
    snaps = []
    for f in range(script.n_frames):
        strands, rig = step(strands, rig, script, f, dt, solver_iters)
        snaps.append((copy.deepcopy(strands), copy.deepcopy(rig)))
    return snaps


# motion families for the dataset script sampler; the paper-side force
# repertoire is unspecified, so this distribution is a free choice
_FAMILIES = ("gentle sway", "vigorous shake", "slow nod", "windy drift")


def sample_script(rng: np.random.Generator, n_frames: int, fps: float = 30.0) -> MotionScript:
    """Draw a random head/wind motion script for data generation."""
    family = _FAMILIES[rng.integers(len(_FAMILIES))]
    t = np.arange(n_frames) / fps
    centers = np.tile(np.array(HEAD_CENTER_REST), (n_frames, 1))
    angles = np.zeros(n_frames)
    wind = np.zeros((n_frames, 2))
    phase = rng.uniform(0, 2 * np.pi)
    if family == "gentle sway":
        amp = rng.uniform(0.15, 0.3)
        freq = rng.uniform(0.4, 0.8)
        centers[:, 0] += amp * np.sin(2 * np.pi * freq * t + phase)
        angles += 0.1 * np.sin(2 * np.pi * freq * t + phase)
    elif family == "vigorous shake":
        amp = rng.uniform(0.3, 0.5)
        freq = rng.uniform(1.0, 1.8)
        centers[:, 0] += amp * np.sin(2 * np.pi * freq * t + phase)
        angles += rng.uniform(0.15, 0.3) * np.sin(2 * np.pi * freq * t + phase + 0.7)
    elif family == "slow nod":
        freq = rng.uniform(0.3, 0.6)
        angles += rng.uniform(0.2, 0.35) * np.sin(2 * np.pi * freq * t + phase)
        centers[:, 1] += 0.08 * np.sin(2 * np.pi * freq * t + phase)
    else:  # windy drift
        amp = rng.uniform(0.1, 0.2)
        freq = rng.uniform(0.3, 0.6)
        centers[:, 0] += amp * np.sin(2 * np.pi * freq * t + phase)
        gust = rng.uniform(6.0, 14.0)
        gfreq = rng.uniform(0.5, 1.2)
        wind[:, 0] = gust * np.maximum(0.0, np.sin(2 * np.pi * gfreq * t + phase))
    return MotionScript(n_frames=n_frames, head_center=centers, head_angle=angles,
                        wind=wind, name=family)
