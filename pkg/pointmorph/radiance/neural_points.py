"""Neural point cloud: positions carrying view-dependent radiance.

Each point stores spherical-harmonics colour coefficients, a volume density
and a confidence. A radiance query gathers the ``k_agg`` nearest points within
``r_agg`` and blends them with confidence-scaled inverse-distance weights.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import EmptyGroup
from ..geometry.rotations import EPS_ZERO
from ..geometry.spatial_index import DEFAULT_LEAF_SIZE, KdTree
from .sh import degree_from_bases, eval_sh

logger = logging.getLogger(__name__)

GROUP_CHARACTER = 0
GROUP_BACKGROUND = 1
GROUP_NAMES = {"character": GROUP_CHARACTER, "background": GROUP_BACKGROUND}

DEFAULT_K_AGG = 8
DEFAULT_R_AGG_FACTOR = 2.5
QUERY_CHUNK = 16384

Group = Union[str, int]


def group_code(group: Group) -> int:
    if isinstance(group, str):
        try:
            return GROUP_NAMES[group]
        except KeyError:
            raise ValueError(f"unknown group {group!r}; expected one of {sorted(GROUP_NAMES)}") from None
    if group not in GROUP_NAMES.values():
        raise ValueError(f"unknown group code {group}")
    return int(group)


@dataclass(frozen=True)
class NeuralPoint:
    position: np.ndarray
    sh_coeffs: np.ndarray  # (3, B)
    density: float
    confidence: float
    group: int = GROUP_CHARACTER


@dataclass(frozen=True)
class RadianceSample:
    sigma: float
    rgb: np.ndarray


def default_aggregation_radius(
    positions: np.ndarray, factor: float = DEFAULT_R_AGG_FACTOR
) -> float:
    """``factor`` times the median nearest-neighbor spacing (1.0 when undefined)."""
    pts = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] < 2:
        return float(factor)
    _, dist = KdTree(pts).knn_batch(pts, 2)
    spacing = float(np.median(dist[:, 1]))
    if not spacing > 0.0:
        return float(factor)
    return factor * spacing


@dataclass
class NeuralPointCloud:
    positions: np.ndarray  # (N, 3)
    sh_coeffs: np.ndarray  # (N, 3, B), channel-major
    density: np.ndarray  # (N,)
    confidence: np.ndarray  # (N,)
    groups: np.ndarray  # (N,) uint8
    r_agg: float
    k_agg: int = DEFAULT_K_AGG

    def __post_init__(self) -> None:
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        n = self.positions.shape[0]
        self.sh_coeffs = np.asarray(self.sh_coeffs, dtype=np.float64)
        if self.sh_coeffs.ndim != 3 or self.sh_coeffs.shape[:2] != (n, 3):
            raise ValueError(f"sh_coeffs must be ({n}, 3, B); got {self.sh_coeffs.shape}")
        degree_from_bases(self.sh_coeffs.shape[2])
        self.density = np.asarray(self.density, dtype=np.float64).reshape(n)
        self.confidence = np.asarray(self.confidence, dtype=np.float64).reshape(n)
        self.groups = np.asarray(self.groups, dtype=np.uint8).reshape(n)
        self.r_agg = float(self.r_agg)
        self.k_agg = int(self.k_agg)

        if n == 0:
            raise ValueError("a neural point cloud needs at least one point")
        if not (np.all(np.isfinite(self.positions)) and np.all(np.isfinite(self.sh_coeffs))):
            raise ValueError("positions and sh_coeffs must be finite")
        if np.any(self.density < 0.0) or not np.all(np.isfinite(self.density)):
            raise ValueError("density must be finite and >= 0")
        if np.any((self.confidence < 0.0) | (self.confidence > 1.0)):
            raise ValueError("confidence must lie in [0, 1]")
        if not set(np.unique(self.groups)).issubset(GROUP_NAMES.values()):
            raise ValueError("group labels must be character (0) or background (1)")
        if not self.r_agg > 0.0:
            raise ValueError("r_agg must be > 0")
        if self.k_agg < 1:
            raise ValueError("k_agg must be >= 1")

    def __len__(self) -> int:
        return self.positions.shape[0]

    def __getitem__(self, i: int) -> NeuralPoint:
        return NeuralPoint(
            position=self.positions[i].copy(),
            sh_coeffs=self.sh_coeffs[i].copy(),
            density=float(self.density[i]),
            confidence=float(self.confidence[i]),
            group=int(self.groups[i]),
        )

    @property
    def sh_degree(self) -> int:
        return degree_from_bases(self.sh_coeffs.shape[2])

    @property
    def character_mask(self) -> np.ndarray:
        return self.groups == GROUP_CHARACTER

    @classmethod
    def from_points(
        cls,
        points: Iterable[NeuralPoint],
        r_agg: Optional[float] = None,
        k_agg: int = DEFAULT_K_AGG,
        r_agg_factor: float = DEFAULT_R_AGG_FACTOR,
    ) -> "NeuralPointCloud":
        points = list(points)
        if not points:
            raise ValueError("a neural point cloud needs at least one point")
        positions = np.stack([p.position for p in points])
        return cls(
            positions=positions,
            sh_coeffs=np.stack([p.sh_coeffs for p in points]),
            density=[p.density for p in points],
            confidence=[p.confidence for p in points],
            groups=[p.group for p in points],
            r_agg=default_aggregation_radius(positions, r_agg_factor) if r_agg is None else r_agg,
            k_agg=k_agg,
        )

    def copy(self) -> "NeuralPointCloud":
        return NeuralPointCloud(
            positions=self.positions.copy(),
            sh_coeffs=self.sh_coeffs.copy(),
            density=self.density.copy(),
            confidence=self.confidence.copy(),
            groups=self.groups.copy(),
            r_agg=self.r_agg,
            k_agg=self.k_agg,
        )

    def with_positions(self, positions: np.ndarray) -> "NeuralPointCloud":
        """Same features, new geometry."""
        moved = self.copy()
        positions = np.asarray(positions, dtype=np.float64)
        if positions.shape != self.positions.shape:
            raise ValueError(f"expected positions of shape {self.positions.shape}, got {positions.shape}")
        moved.positions = positions.copy()
        return moved

    def with_features(
        self, sh_coeffs: Optional[np.ndarray] = None, density: Optional[np.ndarray] = None
    ) -> "NeuralPointCloud":
        updated = self.copy()
        if sh_coeffs is not None:
            updated.sh_coeffs = np.asarray(sh_coeffs, dtype=np.float64).copy()
        if density is not None:
            updated.density = np.asarray(density, dtype=np.float64).copy()
        updated.__post_init__()
        return updated

    def build_index(self, leaf_size: int = DEFAULT_LEAF_SIZE) -> KdTree:
        return KdTree(self.positions, leaf_size)


@dataclass(frozen=True)
class Aggregation:
    """Neighbor indices, blend weights and density falloff for a batch of queries."""

    indices: np.ndarray  # (M, k), -1 where no neighbor
    weights: np.ndarray  # (M, k), rows sum to 1 or are all 0
    falloff: np.ndarray  # (M,)


def gather(
    index: KdTree, confidence: np.ndarray, r_agg: float, k_agg: int, queries: np.ndarray
) -> Aggregation:
    """Neighborhoods of *queries* in *index* and their aggregation weights.

    Weights are ``confidence / distance`` normalized per query; a query sitting
    on a point (distance ``<= EPS_ZERO``) takes that point alone.
    """
    idx, dist = index.knn_batch(queries, k_agg, r_agg)
    present = idx >= 0
    safe = np.where(present, idx, 0)
    gamma = np.where(present, np.asarray(confidence)[safe], 0.0)

    hit = present & (dist <= EPS_ZERO)
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = np.where(present & ~hit, gamma / np.where(hit | ~present, 1.0, dist), 0.0)
    if np.any(hit):
        first = np.argmax(hit, axis=1)
        one_hot = np.zeros_like(raw)
        one_hot[np.arange(len(raw)), first] = 1.0
        raw = np.where(hit.any(axis=1)[:, None], one_hot, raw)

    total = raw.sum(axis=1, keepdims=True)
    weights = np.divide(raw, total, out=np.zeros_like(raw), where=total > 0.0)
    nearest = dist[:, 0] if dist.shape[1] else np.full(len(dist), np.inf)
    falloff = np.where(np.isfinite(nearest), np.exp(-((nearest / r_agg) ** 2)), 0.0)
    return Aggregation(indices=idx, weights=weights, falloff=falloff)


def shade(
    features: NeuralPointCloud, agg: Aggregation, dirs: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Density and clamped colour from gathered neighborhoods viewed along *dirs*."""
    safe = np.where(agg.indices >= 0, agg.indices, 0)
    sigma = agg.falloff * np.sum(agg.weights * features.density[safe], axis=1)
    blended = np.einsum("mk,mkcb->mcb", agg.weights, features.sh_coeffs[safe])
    rgb = np.clip(eval_sh(features.sh_degree, blended, np.asarray(dirs)), 0.0, 1.0)
    return sigma, rgb


def aggregate(
    index: KdTree, features: NeuralPointCloud, queries: np.ndarray, dirs: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Batched radiance: neighbors from *index*, radiance from *features*.

    *index* may be built over moved positions as long as it stays
    index-aligned with *features*.
    """
    queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    sigma = np.zeros(len(queries))
    rgb = np.zeros((len(queries), 3))
    for start in range(0, len(queries), QUERY_CHUNK):
        stop = start + QUERY_CHUNK
        agg = gather(index, features.confidence, features.r_agg, features.k_agg, queries[start:stop])
        sigma[start:stop], rgb[start:stop] = shade(features, agg, dirs[start:stop])
    return sigma, rgb


def eval_radiance_batch(
    cloud: NeuralPointCloud, index: KdTree, queries: np.ndarray, dirs: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    return aggregate(index, cloud, queries, dirs)


def eval_radiance(
    cloud: NeuralPointCloud, index: KdTree, x: Sequence[float], v: Sequence[float]
) -> RadianceSample:
    sigma, rgb = aggregate(index, cloud, np.asarray(x)[None], np.asarray(v)[None])
    return RadianceSample(sigma=float(sigma[0]), rgb=rgb[0])


def composite(
    character: NeuralPointCloud, background: Optional[NeuralPointCloud] = None
) -> NeuralPointCloud:
    """Union of a character cloud and a background cloud, labels preserved."""
    if background is None:
        return character.copy()
    if background.sh_coeffs.shape[2] != character.sh_coeffs.shape[2]:
        raise ValueError("character and background use different SH degrees")
    return NeuralPointCloud(
        positions=np.concatenate([character.positions, background.positions]),
        sh_coeffs=np.concatenate([character.sh_coeffs, background.sh_coeffs]),
        density=np.concatenate([character.density, background.density]),
        confidence=np.concatenate([character.confidence, background.confidence]),
        groups=np.concatenate([character.groups, background.groups]),
        r_agg=character.r_agg,
        k_agg=character.k_agg,
    )


def bounding_box(cloud: NeuralPointCloud, group: Group = "character") -> Tuple[np.ndarray, np.ndarray]:
    """Axis-aligned ``(min, max)`` corners of the points carrying *group*."""
    members = cloud.positions[cloud.groups == group_code(group)]
    if members.shape[0] == 0:
        raise EmptyGroup(f"no points labeled {group!r}")
    return members.min(axis=0), members.max(axis=0)
