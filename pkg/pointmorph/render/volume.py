"""Stratified ray sampling and emission-absorption compositing.

Samples along a ray are stratified over ``[near, far]``: sample ``i`` of ``S``
sits at ``near + (i + u_i) (far - near) / S`` with ``u_i`` uniform in
``[0, 1)``. Samples with no point within the aggregation radius carry zero
density and are never shaded.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import IndexMismatch, UnsortedSamples
from ..geometry.spatial_index import DEFAULT_LEAF_SIZE, KdTree
from ..motion.ray_bending import radiance_deformed
from ..motion.rotation_field import RotationField
from ..radiance.neural_points import NeuralPointCloud, RadianceSample, aggregate
from .camera import Camera, Ray, ray_directions

logger = logging.getLogger(__name__)

DEFAULT_SAMPLES = 128
ROWS_PER_CHUNK = 8


@dataclass
class RenderedFrame:
    rgb: np.ndarray  # (H, W, 3) in [0, 1]
    camera: Camera
    frame_index: int = 0
    mask: Optional[np.ndarray] = None
    opacity: Optional[np.ndarray] = None  # (H, W), 1 - final transmittance
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.rgb.shape != (self.camera.height, self.camera.width, 3):
            raise ValueError(f"buffer {self.rgb.shape} does not match camera {self.camera.shape}")
        if self.mask is not None and self.mask.shape != self.camera.shape:
            raise ValueError("mask does not match camera")


def stratified_depths(
    near: float, far: float, n_samples: int, jitter: np.ndarray
) -> np.ndarray:
    """Sample depths for ``jitter`` of shape ``(..., n_samples)``."""
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    step = (far - near) / n_samples
    return near + (np.arange(n_samples) + jitter) * step


def sample_ray(
    ray: Ray, index: KdTree, r_agg: float, n_samples: int = DEFAULT_SAMPLES, seed: int = 0
) -> List[Tuple[float, np.ndarray]]:
    """Stratified samples along *ray* that have a point within *r_agg*."""
    jitter = np.random.default_rng(seed).random(n_samples)
    ts = stratified_depths(ray.t_near, ray.t_far, n_samples, jitter)
    points = ray.origin + ts[:, None] * ray.direction
    keep = np.isfinite(index.nearest_distance(points, r_agg))
    return [(float(t), p) for t, p in zip(ts[keep], points[keep])]


def alpha_weights(
    ts: np.ndarray, sigmas: np.ndarray, t_far: Any
) -> Tuple[np.ndarray, np.ndarray]:
    """Per-sample compositing weights and final transmittance.

    ``ts`` and ``sigmas`` have shape ``(..., S)``; ``t_far`` broadcasts
    against ``(...)``. The weights and the final transmittance sum to one.
    """
    ts = np.asarray(ts, dtype=np.float64)
    sigmas = np.asarray(sigmas, dtype=np.float64)
    ends = np.broadcast_to(np.asarray(t_far, dtype=np.float64), ts.shape[:-1])[..., None]
    deltas = np.diff(np.concatenate([ts, ends], axis=-1), axis=-1)
    if np.any(deltas < 0.0):
        raise UnsortedSamples("sample depths must be sorted and end before t_far")

    with np.errstate(invalid="ignore"):
        tau = np.where(deltas > 0.0, sigmas * deltas, 0.0)
    accumulated = np.cumsum(tau, axis=-1)
    transmittance = np.exp(-np.concatenate([np.zeros(ts.shape[:-1] + (1,)), accumulated[..., :-1]], axis=-1))
    weights = transmittance * -np.expm1(-tau)
    final = np.exp(-accumulated[..., -1]) if ts.shape[-1] else np.ones(ts.shape[:-1])
    return weights, final


def composite_volume(
    samples: Sequence[Tuple[float, RadianceSample]],
    background_rgb: Sequence[float],
    t_far: float,
) -> np.ndarray:
    """Composite sorted ``(t, sample)`` pairs over *background_rgb*."""
    background = np.asarray(background_rgb, dtype=np.float64)
    if not samples:
        return background.copy()
    ts = np.array([t for t, _ in samples])
    sigmas = np.array([s.sigma for _, s in samples])
    rgbs = np.stack([s.rgb for _, s in samples])
    weights, final = alpha_weights(ts, sigmas, t_far)
    return np.clip(weights @ rgbs + final * background, 0.0, 1.0)


@dataclass
class Scene:
    """What a render call needs: canonical features plus optional deformed geometry."""

    canonical: NeuralPointCloud
    index: KdTree
    deformed: Optional[NeuralPointCloud] = None
    field: Optional[RotationField] = None
    bending: bool = True

    def radiance(self, points: np.ndarray, dirs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        if self.deformed is None:
            return aggregate(self.index, self.canonical, points, dirs)
        return radiance_deformed(
            self.canonical, self.deformed, self.field, self.index, points, dirs, self.bending and self.field is not None
        )


def build_scene(
    canonical: NeuralPointCloud,
    deformed: Optional[NeuralPointCloud] = None,
    field: Optional[RotationField] = None,
    bending: bool = True,
    index: Optional[KdTree] = None,
    leaf_size: int = DEFAULT_LEAF_SIZE,
) -> Scene:
    if deformed is not None:
        if len(deformed) != len(canonical):
            raise IndexMismatch(f"canonical has {len(canonical)} points, deformed has {len(deformed)}")
        if bending and field is None:
            raise ValueError("bending a deformed render needs a rotation field")
    geometry = deformed if deformed is not None else canonical
    index = index if index is not None else geometry.build_index(leaf_size)
    return Scene(canonical, index, deformed, field, bending)


def _render_rows(
    scene: Scene,
    origin: np.ndarray,
    dirs: np.ndarray,
    ts: np.ndarray,
    t_far: float,
    background: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray]:
    n_rays, n_samples = ts.shape
    points = origin + ts[..., None] * dirs[:, None, :]
    flat = points.reshape(-1, 3)
    occupied = np.isfinite(scene.index.nearest_distance(flat, scene.canonical.r_agg))

    sigmas = np.zeros(flat.shape[0])
    colors = np.zeros((flat.shape[0], 3))
    if np.any(occupied):
        view = np.repeat(dirs, n_samples, axis=0)
        sigmas[occupied], colors[occupied] = scene.radiance(flat[occupied], view[occupied])

    weights, final = alpha_weights(ts, sigmas.reshape(n_rays, n_samples), t_far)
    rgb = np.einsum("rs,rsc->rc", weights, colors.reshape(n_rays, n_samples, 3)) + final[:, None] * background
    return np.clip(rgb, 0.0, 1.0), 1.0 - final


def render(
    canonical: NeuralPointCloud,
    cam: Camera,
    *,
    deformed: Optional[NeuralPointCloud] = None,
    field: Optional[RotationField] = None,
    bending: bool = True,
    seed: int = 0,
    n_samples: int = DEFAULT_SAMPLES,
    background: Sequence[float] = (0.0, 0.0, 0.0),
    threads: int = 1,
    index: Optional[KdTree] = None,
    leaf_size: int = DEFAULT_LEAF_SIZE,
    frame_index: int = 0,
) -> RenderedFrame:
    """Volume-render the canonical cloud, or its deformed geometry when given.

    The stratified jitter is drawn once per frame from *seed*, so the image
    does not depend on *threads*.
    """
    scene = build_scene(canonical, deformed, field, bending, index, leaf_size)
    h, w = cam.shape
    dirs = ray_directions(cam)
    jitter = np.random.default_rng(seed).random((h * w, n_samples))
    ts = stratified_depths(cam.near, cam.far, n_samples, jitter)
    bg = np.asarray(background, dtype=np.float64)

    rgb = np.empty((h * w, 3))
    opacity = np.empty(h * w)
    step = ROWS_PER_CHUNK * w

    def work(start: int) -> None:
        stop = min(start + step, h * w)
        rgb[start:stop], opacity[start:stop] = _render_rows(
            scene, cam.position, dirs[start:stop], ts[start:stop], cam.far, bg
        )

    starts = range(0, h * w, step)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, starts))
    else:
        for start in starts:
            work(start)

    return RenderedFrame(
        rgb=rgb.reshape(h, w, 3),
        camera=cam,
        frame_index=frame_index,
        opacity=opacity.reshape(h, w),
        meta={"seed": seed, "n_samples": n_samples, "bending": bool(bending and deformed is not None)},
    )
