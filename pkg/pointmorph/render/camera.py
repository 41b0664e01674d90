"""Pinhole cameras, per-pixel rays and projected bounding-box masks.

Cameras follow the OpenCV convention: camera ``x`` points right, ``y`` down
and ``z`` forward. ``c2w`` is the 4x4 camera-to-world transform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from ..errors import BoxBehindCamera, NotARotation
from ..geometry.rotations import check_rotation, normalize

HULL_TOL = 1e-9

# Box edges as corner index pairs; corner i has bit 0/1/2 selecting max x/y/z.
_BOX_EDGES = [
    (a, a | bit) for a in range(8) for bit in (1, 2, 4) if not a & bit
]


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_near: float
    t_far: float

    def __post_init__(self) -> None:
        if not self.t_near < self.t_far:
            raise ValueError("ray needs t_near < t_far")

    def at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    c2w: np.ndarray
    near: float
    far: float

    def __post_init__(self) -> None:
        c2w = np.array(self.c2w, dtype=np.float64).reshape(4, 4)
        c2w.setflags(write=False)
        object.__setattr__(self, "c2w", c2w)
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be > 0")
        if self.width < 1 or self.height < 1:
            raise ValueError("image size must be positive")
        if not 0.0 < self.near < self.far:
            raise ValueError("camera needs 0 < near < far")
        try:
            check_rotation(c2w[:3, :3])
        except NotARotation as exc:
            raise ValueError(f"camera pose rotation is not proper: {exc}") from exc

    @property
    def rotation(self) -> np.ndarray:
        return self.c2w[:3, :3]

    @property
    def position(self) -> np.ndarray:
        return self.c2w[:3, 3]

    @property
    def forward(self) -> np.ndarray:
        return self.c2w[:3, 2]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.height, self.width

    @classmethod
    def look_at(
        cls,
        eye: Sequence[float],
        target: Sequence[float],
        up: Sequence[float] = (0.0, 0.0, 1.0),
        width: int = 64,
        height: int = 64,
        fov_deg: float = 40.0,
        near: float = 0.5,
        far: float = 8.0,
    ) -> "Camera":
        """Camera at *eye* whose optical axis passes through *target*.

        *fov_deg* is the horizontal field of view; pixels are square and the
        principal point sits at the image center.
        """
        eye = np.asarray(eye, dtype=np.float64)
        forward = normalize(np.asarray(target, dtype=np.float64) - eye)
        up = np.asarray(up, dtype=np.float64)
        if np.linalg.norm(np.cross(forward, up)) < 1e-9:
            up = np.array([0.0, 1.0, 0.0]) if abs(forward[1]) < 0.9 else np.array([1.0, 0.0, 0.0])
        right = normalize(np.cross(forward, up))
        down = np.cross(forward, right)

        c2w = np.eye(4)
        c2w[:3, 0], c2w[:3, 1], c2w[:3, 2], c2w[:3, 3] = right, down, forward, eye
        focal = 0.5 * width / math.tan(math.radians(fov_deg) / 2.0)
        return cls(focal, focal, width / 2.0, height / 2.0, width, height, c2w, near, far)

    def transformed(self, rotation: np.ndarray, translation: Sequence[float] = (0.0, 0.0, 0.0)) -> "Camera":
        """The same camera after a rigid world motion ``x -> rotation @ x + translation``."""
        motion = np.eye(4)
        motion[:3, :3] = rotation
        motion[:3, 3] = translation
        return Camera(
            self.fx, self.fy, self.cx, self.cy, self.width, self.height,
            motion @ self.c2w, self.near, self.far,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "w": self.width,
            "h": self.height,
            "c2w": [float(v) for v in self.c2w.reshape(-1)],
            "near": self.near,
            "far": self.far,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Camera":
        c2w = data["c2w"]
        if len(c2w) != 16:
            raise ValueError("c2w must hold 16 row-major values")
        return cls(
            float(data["fx"]), float(data["fy"]), float(data["cx"]), float(data["cy"]),
            int(data["w"]), int(data["h"]), np.asarray(c2w, dtype=np.float64),
            float(data["near"]), float(data["far"]),
        )


def ray_directions(cam: Camera) -> np.ndarray:
    """World-space unit directions through every pixel center, row-major ``(H*W, 3)``."""
    v, u = np.meshgrid(np.arange(cam.height), np.arange(cam.width), indexing="ij")
    local = np.stack(
        [
            (u.reshape(-1) + 0.5 - cam.cx) / cam.fx,
            (v.reshape(-1) + 0.5 - cam.cy) / cam.fy,
            np.ones(cam.height * cam.width),
        ],
        axis=-1,
    )
    return normalize(local @ cam.rotation.T)


def generate_rays(cam: Camera) -> List[Ray]:
    origin = cam.position.copy()
    return [Ray(origin, d, cam.near, cam.far) for d in ray_directions(cam)]


def project(cam: Camera, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Continuous pixel coordinates ``(u, v)`` and camera depth of world points."""
    local = (np.asarray(points, dtype=np.float64).reshape(-1, 3) - cam.position) @ cam.rotation
    depth = local[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = np.stack(
            [cam.fx * local[:, 0] / depth + cam.cx, cam.fy * local[:, 1] / depth + cam.cy], axis=-1
        )
    return uv, depth


def _clipped_corners(cam: Camera, corners: np.ndarray) -> np.ndarray:
    """Camera-space box vertices in front of the near plane plus edge crossings."""
    local = (corners - cam.position) @ cam.rotation
    z = local[:, 2]
    kept = [local[i] for i in range(8) if z[i] >= cam.near]
    for a, b in _BOX_EDGES:
        if (z[a] >= cam.near) != (z[b] >= cam.near):
            s = (cam.near - z[a]) / (z[b] - z[a])
            kept.append(local[a] + s * (local[b] - local[a]))
    return np.asarray(kept).reshape(-1, 3)


def _mark_points(mask: np.ndarray, uv: np.ndarray) -> None:
    h, w = mask.shape
    cols = np.floor(uv[:, 0]).astype(np.int64)
    rows = np.floor(uv[:, 1]).astype(np.int64)
    keep = (cols >= 0) & (cols < w) & (rows >= 0) & (rows < h)
    mask[rows[keep], cols[keep]] = True


def project_bbox_mask(cam: Camera, box: Tuple[Sequence[float], Sequence[float]]) -> np.ndarray:
    """Rasterize the convex hull of an axis-aligned box's projection.

    A pixel is inside when its center lies in the hull. Degenerate
    projections (a point or a segment) mark the pixels they pass through.
    """
    lo, hi = (np.asarray(c, dtype=np.float64).reshape(3) for c in box)
    if np.any(hi < lo):
        raise ValueError("box max corner lies below its min corner")
    corners = np.array([[(hi if i & bit else lo)[axis] for axis, bit in enumerate((1, 2, 4))] for i in range(8)])

    local = (corners - cam.position) @ cam.rotation
    if np.all(local[:, 2] < cam.near):
        raise BoxBehindCamera("every box corner lies behind the near plane")

    visible = _clipped_corners(cam, corners)
    uv = np.stack(
        [cam.fx * visible[:, 0] / visible[:, 2] + cam.cx, cam.fy * visible[:, 1] / visible[:, 2] + cam.cy],
        axis=-1,
    )
    mask = np.zeros(cam.shape, dtype=bool)

    try:
        hull = ConvexHull(uv)
    except (QhullError, ValueError):
        hull = None
    if hull is None or hull.volume <= HULL_TOL:
        gaps = np.linalg.norm(uv[:, None, :] - uv[None, :, :], axis=-1)
        i, j = np.unravel_index(np.argmax(gaps), gaps.shape)
        lo_uv, hi_uv = uv[i], uv[j]
        steps = max(2, int(np.ceil(2.0 * np.linalg.norm(hi_uv - lo_uv))) + 1)
        _mark_points(mask, lo_uv + np.linspace(0.0, 1.0, steps)[:, None] * (hi_uv - lo_uv))
        return mask

    v, u = np.meshgrid(np.arange(cam.height) + 0.5, np.arange(cam.width) + 0.5, indexing="ij")
    centers = np.stack([u.reshape(-1), v.reshape(-1)], axis=-1)
    side = centers @ hull.equations[:, :2].T + hull.equations[:, 2]
    mask[:] = np.all(side <= HULL_TOL, axis=1).reshape(cam.shape)
    return mask
