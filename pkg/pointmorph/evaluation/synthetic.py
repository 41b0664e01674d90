"""Procedural scenes with analytic motion, keypoints and camera trajectories.

Every scene is a neural point cloud with known radiance plus, per motion
frame, the exact deformed positions and the exact per-point rotation taking
deformed-space directions back to canonical space. Articulated scenes move
rigid segments by forward kinematics and blend parent and child transforms
linearly across a joint band.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import BadParams
from ..geometry.rotations import axis_angle_matrix, nlerp_rotations_batch, quats_to_rots, rots_to_quats
from ..motion.deformation import KeypointFrame
from ..motion.rotation_field import RotationField
from ..radiance.neural_points import (
    GROUP_BACKGROUND,
    GROUP_CHARACTER,
    NeuralPointCloud,
    bounding_box,
    composite,
    default_aggregation_radius,
)
from ..radiance.sh import num_bases, rgb_to_dc
from ..render.camera import Camera

logger = logging.getLogger(__name__)

SCENE_KINDS = ("sphere", "textured_sphere", "two_segment_limb", "articulated_biped", "box_room_background")
CAMERA_PATHS = ("sphere_orbit", "horizontal_circle")

LIGHT = np.array([0.92, 0.55, 0.25])
DARK = np.array([0.2, 0.35, 0.8])
WALL_LIGHT = np.array([0.7, 0.7, 0.65])
WALL_DARK = np.array([0.35, 0.35, 0.4])
LIMB_RADIUS = 0.25
GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


@dataclass
class SceneParams:
    n_points: int = 4000
    n_keypoints: int = 300
    texture_frequency: int = 4
    view_dependence: float = 0.6
    motion_angles: List[float] = field(default_factory=lambda: [0.0, 22.5, 45.0])
    joint_band: float = 0.2
    point_density: float = 40.0
    sh_degree: int = 2
    k_agg: int = 8
    r_agg_factor: float = 2.5
    n_train_views: int = 8
    image_width: int = 64
    image_height: int = 64
    fov_deg: float = 40.0
    camera_radius: float = 4.0
    near: float = 0.5
    far: float = 8.0

    def validate(self) -> "SceneParams":
        problems = []
        if self.n_points < 16:
            problems.append("n_points must be >= 16")
        if not 4 <= self.n_keypoints:
            problems.append("n_keypoints must be >= 4")
        if self.texture_frequency < 1:
            problems.append("texture_frequency must be >= 1")
        if self.view_dependence < 0:
            problems.append("view_dependence must be >= 0")
        if not self.motion_angles:
            problems.append("need at least one motion frame")
        if self.joint_band < 0:
            problems.append("joint_band must be >= 0")
        if self.point_density <= 0:
            problems.append("point_density must be > 0")
        if not 0 <= self.sh_degree <= 3:
            problems.append("sh_degree must lie in [0, 3]")
        if self.n_train_views < 1:
            problems.append("n_train_views must be >= 1")
        if not 0 < self.near < self.far:
            problems.append("need 0 < near < far")
        if problems:
            raise BadParams("; ".join(problems))
        return self

    @classmethod
    def from_config(cls, cfg: Any) -> "SceneParams":
        names = cls.__dataclass_fields__.keys()
        return cls(**{name: getattr(cfg, name) for name in names})

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class SyntheticScene:
    kind: str
    seed: int
    params: SceneParams
    cloud: NeuralPointCloud  # canonical, character and background
    keypoint_ids: np.ndarray  # indices into cloud, character points only
    frame_positions: List[np.ndarray]  # per motion frame, (N, 3)
    frame_rotations: List[np.ndarray]  # per motion frame, (N, 3, 3) deformed -> canonical
    train_cameras: List[Camera]
    test_cameras: List[Camera]
    diagonal: float

    @property
    def n_frames(self) -> int:
        return len(self.frame_positions)

    @property
    def character_ids(self) -> np.ndarray:
        return np.flatnonzero(self.cloud.groups == GROUP_CHARACTER)

    def deformed_cloud(self, t: int) -> NeuralPointCloud:
        return self.cloud.with_positions(self.frame_positions[t])

    def rotation_field(self, t: int, k_rot: int = 8) -> RotationField:
        return RotationField.from_rotations(
            self.frame_rotations[t], self.frame_positions[t], k_rot, radius=self.cloud.r_agg
        )

    def character_box(self, t: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
        cloud = self.cloud if t is None else self.deformed_cloud(t)
        return bounding_box(cloud, "character")

    def keypoint_frames(self, indices: Optional[np.ndarray] = None) -> List[KeypointFrame]:
        ids = self.keypoint_ids if indices is None else np.asarray(indices)
        return [
            KeypointFrame(self.cloud.positions[ids], positions[ids], t)
            for t, positions in enumerate(self.frame_positions)
        ]


def sample_keypoints(character_ids: np.ndarray, n_kp: int, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """Uniform random keypoints without replacement; the rest are held out."""
    character_ids = np.asarray(character_ids)
    n_kp = min(int(n_kp), len(character_ids))
    chosen = np.sort(np.random.default_rng(seed).choice(character_ids, size=n_kp, replace=False))
    held_out = np.setdiff1d(character_ids, chosen)
    return chosen, held_out


def fibonacci_sphere(n: int, radius: float = 1.0) -> np.ndarray:
    i = np.arange(n) + 0.5
    z = 1.0 - 2.0 * i / n
    rho = np.sqrt(np.clip(1.0 - z * z, 0.0, 1.0))
    phi = GOLDEN_ANGLE * i
    pts = np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=1)
    return radius * pts / np.linalg.norm(pts, axis=1, keepdims=True)


def _checker(u: np.ndarray, v: np.ndarray, frequency: int, light: np.ndarray, dark: np.ndarray) -> np.ndarray:
    parity = (np.floor(frequency * u) + np.floor(frequency * v)).astype(np.int64) % 2
    return np.where(parity[:, None] == 0, light, dark)


def _radiance(
    colors: np.ndarray, degree: int, view_dependence: float, rng: np.random.Generator
) -> np.ndarray:
    """SH coefficients whose constant band decodes to *colors*.

    Higher bands share one random tint per channel scaled by *view_dependence*.
    """
    bases = num_bases(degree)
    sh = np.zeros((len(colors), 3, bases))
    sh[:, :, 0] = rgb_to_dc(colors)
    if bases > 1 and view_dependence > 0:
        tint = rng.normal(0.0, 1.0, size=(3, bases - 1))
        tint /= np.linalg.norm(tint, axis=1, keepdims=True)
        sh[:, :, 1:] = view_dependence * tint
    return sh


def _cloud(
    positions: np.ndarray, sh: np.ndarray, params: SceneParams, group: int, r_agg: float
) -> NeuralPointCloud:
    n = len(positions)
    return NeuralPointCloud(
        positions=positions,
        sh_coeffs=sh,
        density=np.full(n, params.point_density),
        confidence=np.ones(n),
        groups=np.full(n, group, dtype=np.uint8),
        r_agg=r_agg,
        k_agg=params.k_agg,
    )


# Rigid-segment machinery


@dataclass
class Segment:
    """A cylinder hanging off its parent at *joint*, rotating about *axis*."""

    name: str
    parent: Optional[int]
    joint: np.ndarray
    direction: np.ndarray
    length: float
    radius: float
    axis: np.ndarray
    angle_scale: float


def _pose(segments: Sequence[Segment], angle: float) -> List[Tuple[np.ndarray, np.ndarray]]:
    """World transforms ``x -> R x + t`` by forward kinematics."""
    poses: List[Tuple[np.ndarray, np.ndarray]] = []
    for seg in segments:
        local = axis_angle_matrix(seg.axis, math.radians(angle) * seg.angle_scale)
        local_t = seg.joint - local @ seg.joint
        if seg.parent is None:
            poses.append((local, local_t))
        else:
            r_p, t_p = poses[seg.parent]
            poses.append((r_p @ local, r_p @ local_t + t_p))
    return poses


def _sample_cylinder(
    seg: Segment, n: int, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Surface points, their distance along the axis and their angle around it."""
    d = seg.direction / np.linalg.norm(seg.direction)
    helper = np.array([0.0, 0.0, 1.0]) if abs(d[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(d, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(d, e1)
    along = rng.uniform(0.0, seg.length, n)
    theta = rng.uniform(0.0, 2.0 * math.pi, n)
    pts = seg.joint + along[:, None] * d + seg.radius * (np.cos(theta)[:, None] * e1 + np.sin(theta)[:, None] * e2)
    return pts, along, theta


def _articulate(
    segments: Sequence[Segment],
    positions: np.ndarray,
    owner: np.ndarray,
    blend: np.ndarray,
    angles: Sequence[float],
) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """Deformed positions and deformed-to-canonical rotations for every frame.

    A point owned by segment ``s`` with blend ``b`` moves by
    ``(1 - b) T_parent + b T_s``; its rotation is the NLerp of the inverse
    rotations with the same weights.
    """
    parents = np.array([s.parent if s.parent is not None else i for i, s in enumerate(segments)])
    out_pos: List[np.ndarray] = []
    out_rot: List[np.ndarray] = []
    for angle in angles:
        poses = _pose(segments, angle)
        rots = np.stack([r for r, _ in poses])
        trans = np.stack([t for _, t in poses])
        own_r, own_t = rots[owner], trans[owner]
        par_r, par_t = rots[parents[owner]], trans[parents[owner]]
        own_x = np.einsum("nij,nj->ni", own_r, positions) + own_t
        par_x = np.einsum("nij,nj->ni", par_r, positions) + par_t
        out_pos.append((1.0 - blend)[:, None] * par_x + blend[:, None] * own_x)

        inv = rots_to_quats(np.transpose(rots, (0, 2, 1)))
        pair = np.stack([inv[parents[owner]], inv[owner]], axis=1)
        weights = np.stack([1.0 - blend, blend], axis=1)
        out_rot.append(quats_to_rots(nlerp_rotations_batch(pair, weights)))
    return out_pos, out_rot


def _joint_blend(along: np.ndarray, band: float, centered: bool) -> np.ndarray:
    """Child weight across a joint band starting (or centered) at the joint."""
    if band <= 0.0:
        return (along >= 0.0).astype(np.float64)
    offset = 0.5 if centered else 0.0
    return np.clip(along / band + offset, 0.0, 1.0)


def _limb_segments() -> List[Segment]:
    x = np.array([1.0, 0.0, 0.0])
    z = np.array([0.0, 0.0, 1.0])
    return [
        Segment("upper", None, np.array([-1.0, 0.0, 0.0]), x, 1.0, LIMB_RADIUS, z, 0.0),
        Segment("lower", 0, np.zeros(3), x, 1.0, LIMB_RADIUS, z, 1.0),
    ]


def _limb(params: SceneParams, rng: np.random.Generator):
    """Cylinder along x from -1 to 1; the outer half bends about z at the origin."""
    segments = _limb_segments()
    span = Segment("limb", None, np.array([-1.0, 0.0, 0.0]), np.array([1.0, 0.0, 0.0]), 2.0, LIMB_RADIUS, np.zeros(3), 0.0)
    positions, along, theta = _sample_cylinder(span, params.n_points, rng)
    owner = np.ones(params.n_points, dtype=np.int64)
    blend = _joint_blend(positions[:, 0], params.joint_band, centered=True)
    colors = _checker(along / 2.0, theta / (2.0 * math.pi), params.texture_frequency, LIGHT, DARK)
    return segments, positions, owner, blend, colors


def _biped_segments() -> List[Segment]:
    x = np.array([1.0, 0.0, 0.0])
    y = np.array([0.0, 1.0, 0.0])
    up = np.array([0.0, 0.0, 1.0])
    down = -up
    hip_l, hip_r = np.array([0.0, 0.15, 0.0]), np.array([0.0, -0.15, 0.0])
    sh_l, sh_r = np.array([0.0, 0.3, 1.0]), np.array([0.0, -0.3, 1.0])
    return [
        Segment("torso", None, np.zeros(3), up, 1.0, 0.22, y, 0.0),
        Segment("thigh_l", 0, hip_l, down, 0.5, 0.09, y, 1.0),
        Segment("shin_l", 1, hip_l + 0.5 * down, down, 0.5, 0.08, y, -1.0),
        Segment("thigh_r", 0, hip_r, down, 0.5, 0.09, y, -1.0),
        Segment("shin_r", 3, hip_r + 0.5 * down, down, 0.5, 0.08, y, -1.0),
        Segment("arm_l", 0, sh_l, y, 0.45, 0.07, x, 1.0),
        Segment("forearm_l", 5, sh_l + 0.45 * y, y, 0.4, 0.06, x, 1.0),
        Segment("arm_r", 0, sh_r, -y, 0.45, 0.07, x, 1.0),
        Segment("forearm_r", 7, sh_r - 0.45 * y, -y, 0.4, 0.06, x, 1.0),
    ]


def _biped(params: SceneParams, rng: np.random.Generator):
    """Torso with two-segment legs and arms posed by forward kinematics."""
    segments = _biped_segments()
    areas = np.array([s.length * s.radius for s in segments])
    counts = np.floor(params.n_points * areas / areas.sum()).astype(np.int64)
    counts[0] += params.n_points - counts.sum()

    pos_parts, owner_parts, blend_parts, color_parts = [], [], [], []
    for i, (seg, count) in enumerate(zip(segments, counts)):
        pts, along, theta = _sample_cylinder(seg, int(count), rng)
        pos_parts.append(pts)
        owner_parts.append(np.full(int(count), i, dtype=np.int64))
        blend_parts.append(
            np.ones(int(count)) if seg.parent is None else _joint_blend(along, params.joint_band, centered=False)
        )
        color_parts.append(
            _checker(along / seg.length, theta / (2.0 * math.pi), params.texture_frequency, LIGHT, DARK)
        )
    return (
        segments,
        np.concatenate(pos_parts),
        np.concatenate(owner_parts),
        np.concatenate(blend_parts),
        np.concatenate(color_parts),
    )


def _room(params: SceneParams, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Floor and two walls of an open room around the origin."""
    n = max(params.n_points, 16)
    per = n // 3
    extent, floor_z, wall = 2.5, -1.0, -2.5
    a = rng.uniform(-extent, extent, (n, 2))
    floor = np.stack([a[:per, 0], a[:per, 1], np.full(per, floor_z)], axis=1)
    back = np.stack([np.full(per, wall), a[per : 2 * per, 0], rng.uniform(floor_z, 2.0, per)], axis=1)
    rest = n - 2 * per
    side = np.stack([a[2 * per :, 0], np.full(rest, wall), rng.uniform(floor_z, 2.0, rest)], axis=1)
    positions = np.concatenate([floor, back, side])
    u = (positions[:, 0] + positions[:, 2]) / 5.0
    v = (positions[:, 1] + positions[:, 2]) / 5.0
    return positions, _checker(u, v, params.texture_frequency, WALL_LIGHT, WALL_DARK)


def _sphere_scene(params: SceneParams, rng: np.random.Generator, view_dependent: bool):
    positions = fibonacci_sphere(params.n_points)
    theta = np.arccos(np.clip(positions[:, 2], -1.0, 1.0)) / math.pi
    phi = (np.arctan2(positions[:, 1], positions[:, 0]) + math.pi) / (2.0 * math.pi)
    colors = _checker(theta, phi, params.texture_frequency, LIGHT, DARK)
    sh = _radiance(colors, params.sh_degree, params.view_dependence if view_dependent else 0.0, rng)

    flip_axis = np.array([1.0, 0.0, 0.0])
    frame_pos, frame_rot = [], []
    for angle in params.motion_angles:
        motion = axis_angle_matrix(flip_axis, math.radians(angle))
        frame_pos.append(positions @ motion.T)
        frame_rot.append(np.broadcast_to(motion.T, (len(positions), 3, 3)).copy())
    return positions, sh, frame_pos, frame_rot


def camera_path(
    kind: str,
    n_views: int,
    radius: float,
    look_at: Sequence[float] = (0.0, 0.0, 0.0),
    *,
    width: int = 64,
    height: int = 64,
    fov_deg: float = 40.0,
    near: float = 0.5,
    far: float = 8.0,
) -> List[Camera]:
    """Cameras at distance *radius* from *look_at*, all aimed at it.

    ``horizontal_circle`` starts on ``+x`` and steps evenly in azimuth at zero
    elevation. ``sphere_orbit`` spreads views with uniformly spaced
    ``sin(elevation)`` and golden-angle azimuth steps.
    """
    if n_views < 1:
        raise ValueError("n_views must be >= 1")
    target = np.asarray(look_at, dtype=np.float64)
    if kind == "horizontal_circle":
        azimuth = 2.0 * math.pi * np.arange(n_views) / n_views
        offsets = np.stack([np.cos(azimuth), np.sin(azimuth), np.zeros(n_views)], axis=1)
    elif kind == "sphere_orbit":
        i = np.arange(n_views) + 0.5
        z = 1.0 - 2.0 * i / n_views
        rho = np.sqrt(1.0 - z * z)
        azimuth = GOLDEN_ANGLE * np.arange(n_views)
        offsets = np.stack([rho * np.cos(azimuth), rho * np.sin(azimuth), z], axis=1)
    else:
        raise ValueError(f"unknown camera path {kind!r}; expected one of {CAMERA_PATHS}")
    return [
        Camera.look_at(target + radius * off, target, (0.0, 0.0, 1.0), width, height, fov_deg, near, far)
        for off in offsets
    ]


def generate_scene(kind: str, params: Optional[SceneParams] = None, seed: int = 0) -> SyntheticScene:
    """Build a reproducible scene of the given kind from an integer seed.

    Randomness comes from ``numpy.random.default_rng(seed)`` (PCG64).
    """
    if kind not in SCENE_KINDS:
        raise BadParams(f"unknown scene kind {kind!r}; expected one of {SCENE_KINDS}")
    params = (params or SceneParams()).validate()
    rng = np.random.default_rng(seed)

    if kind in ("sphere", "textured_sphere"):
        positions, sh, frame_pos, frame_rot = _sphere_scene(params, rng, kind == "textured_sphere")
        character = _cloud(positions, sh, params, GROUP_CHARACTER, default_aggregation_radius(positions, params.r_agg_factor))
        cloud = character
    else:
        build = _biped if kind == "articulated_biped" else _limb
        segments, positions, owner, blend, colors = build(params, rng)
        sh = _radiance(colors, params.sh_degree, params.view_dependence, rng)
        r_agg = default_aggregation_radius(positions, params.r_agg_factor)
        character = _cloud(positions, sh, params, GROUP_CHARACTER, r_agg)
        frame_pos, frame_rot = _articulate(segments, positions, owner, blend, params.motion_angles)
        cloud = character
        if kind == "box_room_background":
            wall_pos, wall_colors = _room(params, rng)
            background = _cloud(wall_pos, _radiance(wall_colors, params.sh_degree, 0.0, rng), params, GROUP_BACKGROUND, r_agg)
            cloud = composite(character, background)
            identity = np.broadcast_to(np.eye(3), (len(wall_pos), 3, 3))
            frame_pos = [np.concatenate([p, wall_pos]) for p in frame_pos]
            frame_rot = [np.concatenate([r, identity]) for r in frame_rot]

    character_ids = np.flatnonzero(cloud.groups == GROUP_CHARACTER)
    keypoint_ids, _ = sample_keypoints(character_ids, params.n_keypoints, seed)
    lo, hi = bounding_box(cloud, "character")

    cams = dict(width=params.image_width, height=params.image_height, fov_deg=params.fov_deg, near=params.near, far=params.far)
    scene = SyntheticScene(
        kind=kind,
        seed=seed,
        params=params,
        cloud=cloud,
        keypoint_ids=keypoint_ids,
        frame_positions=frame_pos,
        frame_rotations=frame_rot,
        train_cameras=camera_path("sphere_orbit", params.n_train_views, params.camera_radius, **cams),
        test_cameras=camera_path("horizontal_circle", len(params.motion_angles), params.camera_radius, **cams),
        diagonal=float(np.linalg.norm(hi - lo)),
    )
    logger.info(
        "generated %s: %d points (%d character), %d frames, diagonal %.3f",
        kind, len(cloud), len(character_ids), scene.n_frames, scene.diagonal,
    )
    return scene
