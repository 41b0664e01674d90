"""Fit per-point SH colour and density to posed images.

Positions and confidences stay frozen, so sample positions, neighborhoods,
blend weights and falloffs are computed once with numpy. Each iteration
renders a minibatch of rays in torch from those cached quantities and takes
an Adam step on the SH coefficients and densities.
"""

from __future__ import annotations

import logging
import math
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import torch
from tqdm import tqdm

from ..errors import DimMismatch, DivergedFit
from ..geometry.spatial_index import DEFAULT_LEAF_SIZE, KdTree
from ..render.camera import Camera, ray_directions
from ..render.volume import stratified_depths
from .neural_points import QUERY_CHUNK, NeuralPointCloud, gather
from .sh import eval_sh

logger = logging.getLogger(__name__)

LossCallback = Callable[[int, float], None]
Frame = Tuple[Camera, np.ndarray]


class RayProblem:
    """Cached sampling geometry for every ray that passes near the cloud.

    Jitter for camera ``c`` is drawn from ``default_rng(seed)`` exactly as
    :func:`pointmorph.render.volume.render` draws it, so :meth:`pixels`
    reproduces rendered pixel values.
    """

    def __init__(
        self,
        cloud: NeuralPointCloud,
        frames: Sequence[Frame],
        n_samples: int,
        seed: int = 0,
        background: Sequence[float] = (0.0, 0.0, 0.0),
        index: Optional[KdTree] = None,
        leaf_size: int = DEFAULT_LEAF_SIZE,
    ) -> None:
        self.degree = cloud.sh_degree
        self.background = torch.tensor(np.asarray(background, dtype=np.float64))
        index = index if index is not None else cloud.build_index(leaf_size)

        targets: List[np.ndarray] = []
        pixel_ids: List[np.ndarray] = []
        counts: List[np.ndarray] = []
        idx_parts, w_parts, fall_parts, delta_parts, dir_parts = [], [], [], [], []

        for view, (cam, image) in enumerate(frames):
            image = np.asarray(image, dtype=np.float64)
            if image.shape != (cam.height, cam.width, 3):
                raise DimMismatch(f"view {view}: image {image.shape} does not match camera {cam.shape}")
            n_rays = cam.height * cam.width
            dirs = ray_directions(cam)
            jitter = np.random.default_rng(seed).random((n_rays, n_samples))
            ts = stratified_depths(cam.near, cam.far, n_samples, jitter)
            deltas = np.diff(np.concatenate([ts, np.full((n_rays, 1), cam.far)], axis=1), axis=1)
            points = cam.position + ts[..., None] * dirs[:, None, :]
            occupied = np.isfinite(index.nearest_distance(points.reshape(-1, 3), cloud.r_agg)).reshape(n_rays, n_samples)

            per_ray = occupied.sum(axis=1)
            hit = per_ray > 0
            targets.append(image.reshape(-1, 3)[hit])
            pixel_ids.append(np.stack([np.full(hit.sum(), view), np.flatnonzero(hit)], axis=1))
            counts.append(per_ray[hit])

            rows, cols = np.nonzero(occupied[hit])
            sample_points = points[hit][rows, cols]
            for start in range(0, len(sample_points), QUERY_CHUNK):
                agg = gather(index, cloud.confidence, cloud.r_agg, cloud.k_agg, sample_points[start : start + QUERY_CHUNK])
                idx_parts.append(np.where(agg.indices >= 0, agg.indices, 0))
                w_parts.append(agg.weights)
                fall_parts.append(agg.falloff)
            delta_parts.append(deltas[hit][rows, cols])
            dir_parts.append(dirs[hit][rows])

        k = cloud.k_agg
        self.targets = np.concatenate(targets) if targets else np.empty((0, 3))
        self.pixel_ids = np.concatenate(pixel_ids) if pixel_ids else np.empty((0, 2), dtype=np.int64)
        self.counts = np.concatenate(counts).astype(np.int64) if counts else np.empty(0, dtype=np.int64)
        self.starts = np.concatenate([[0], np.cumsum(self.counts)[:-1]]).astype(np.int64)
        self.neighbors = np.concatenate(idx_parts) if idx_parts else np.empty((0, k), dtype=np.int64)
        self.weights = np.concatenate(w_parts) if w_parts else np.empty((0, k))
        self.falloff = np.concatenate(fall_parts) if fall_parts else np.empty(0)
        self.deltas = np.concatenate(delta_parts) if delta_parts else np.empty(0)
        self.dirs = np.concatenate(dir_parts) if dir_parts else np.empty((0, 3))
        logger.debug("%d rays, %d occupied samples cached", len(self.counts), len(self.deltas))

    @property
    def n_rays(self) -> int:
        return len(self.counts)

    def pixels(self, sh: torch.Tensor, density: torch.Tensor, rays: np.ndarray) -> torch.Tensor:
        """Differentiable colours of cached rays *rays* for the given features."""
        rays = np.asarray(rays, dtype=np.int64)
        counts = self.counts[rays]
        firsts = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)
        local = np.repeat(np.arange(len(rays)), counts)
        samples = np.repeat(self.starts[rays] - firsts, counts) + np.arange(int(counts.sum()))

        neighbors = torch.from_numpy(self.neighbors[samples])
        weights = torch.from_numpy(self.weights[samples])
        sigma = torch.from_numpy(self.falloff[samples]) * torch.sum(weights * density[neighbors], dim=1)
        blended = torch.einsum("pk,pkcb->pcb", weights, sh[neighbors])
        rgb = torch.clamp(eval_sh(self.degree, blended, torch.from_numpy(self.dirs[samples])), 0.0, 1.0)

        tau = sigma * torch.from_numpy(self.deltas[samples])
        before = torch.cumsum(tau, dim=0) - tau
        before = before - before[torch.from_numpy(firsts[local])]
        contrib = torch.exp(-before) * -torch.expm1(-tau)

        local_t = torch.from_numpy(local)
        color = torch.zeros((len(rays), 3), dtype=torch.float64).index_add(0, local_t, contrib[:, None] * rgb)
        totals = torch.zeros(len(rays), dtype=torch.float64).index_add(0, local_t, tau)
        return color + torch.exp(-totals)[:, None] * self.background


def fit_radiance(
    cloud: NeuralPointCloud,
    frames: Sequence[Frame],
    iters: int,
    *,
    lr: float = 1e-2,
    batch_size: int = 1024,
    n_samples: int = 128,
    seed: int = 0,
    background: Sequence[float] = (0.0, 0.0, 0.0),
    callback: Optional[LossCallback] = None,
    progress: bool = False,
    leaf_size: int = DEFAULT_LEAF_SIZE,
) -> NeuralPointCloud:
    """Adam on the mean squared pixel error of minibatches of ``batch_size`` rays.

    Positions, confidences and labels are untouched; density is projected
    back to ``>= 0`` after every step.
    """
    if len(frames) < 2:
        raise ValueError("radiance fitting needs at least 2 views")
    if iters <= 0:
        return cloud.copy()

    problem = RayProblem(cloud, frames, n_samples, seed, background, leaf_size=leaf_size)
    if problem.n_rays == 0:
        logger.warning("no ray passes near the cloud; returning it unchanged")
        return cloud.copy()

    sh = torch.tensor(cloud.sh_coeffs, dtype=torch.float64, requires_grad=True)
    density = torch.tensor(cloud.density, dtype=torch.float64, requires_grad=True)
    optimizer = torch.optim.Adam([sh, density], lr=lr)
    rng = np.random.default_rng(seed)
    targets = torch.from_numpy(problem.targets)

    order = rng.permutation(problem.n_rays)
    cursor = 0
    value = float("nan")
    for iteration in tqdm(range(iters), desc="fit radiance", disable=not progress, leave=False):
        if cursor + batch_size > problem.n_rays and cursor > 0:
            order = rng.permutation(problem.n_rays)
            cursor = 0
        batch = order[cursor : cursor + batch_size]
        cursor += batch_size

        optimizer.zero_grad()
        loss = torch.mean((problem.pixels(sh, density, batch) - targets[batch]) ** 2)
        value = float(loss.detach())
        if not math.isfinite(value):
            raise DivergedFit(f"radiance fit diverged at iteration {iteration}")
        loss.backward()
        optimizer.step()
        with torch.no_grad():
            density.clamp_(min=0.0)
        if callback is not None:
            callback(iteration, value)

    logger.info("radiance fit: last minibatch loss %.4e after %d iterations", value, iters)
    return cloud.with_features(sh_coeffs=sh.detach().numpy(), density=density.detach().numpy())
