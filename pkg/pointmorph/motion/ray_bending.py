"""Bend deformed-space view directions back into canonical space."""

from __future__ import annotations

from typing import Sequence, Tuple

import numpy as np

from ..errors import IndexMismatch
from ..geometry.rotations import (
    inverse_distance_weights_batch,
    nlerp_rotations_batch,
    normalize,
    quats_to_rots,
)
from ..geometry.spatial_index import KdTree
from ..radiance.neural_points import NeuralPointCloud, RadianceSample, aggregate
from .rotation_field import RotationField


def bend_directions(field: RotationField, positions: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Batched :func:`bend_direction` over ``(M, 3)`` positions and directions."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    if positions.shape[0] == 0:
        return dirs.copy()

    # The radius only gates passthrough; the blend always spans the k_rot nearest.
    idx, dist = field.index.knn_batch(positions, field.k_rot)
    found = dist[:, 0] <= field.radius
    weights = inverse_distance_weights_batch(dist)
    quats = field.quats[np.where(idx >= 0, idx, 0)]
    blended = nlerp_rotations_batch(quats, weights)

    bent = normalize(np.einsum("mij,mj->mi", quats_to_rots(blended), dirs))
    return np.where(found[:, None], bent, dirs)


def bend_direction(field: RotationField, sample_pos: Sequence[float], v_hat: Sequence[float]) -> np.ndarray:
    """``R @ v_hat`` with ``R`` blended from the rotations around *sample_pos*.

    ``R`` blends the ``k_rot`` nearest rotations. Directions are returned
    unchanged when the nearest point lies beyond the field's radius.
    """
    return bend_directions(field, np.asarray(sample_pos)[None], np.asarray(v_hat)[None])[0]


def radiance_deformed(
    canonical: NeuralPointCloud,
    deformed: NeuralPointCloud,
    field: RotationField,
    index_deformed: KdTree,
    queries: np.ndarray,
    dirs: np.ndarray,
    bending: bool = True,
) -> Tuple[np.ndarray, np.ndarray]:
    """Batched radiance of the deformed scene.

    Neighbors and distances come from the deformed geometry; features are the
    canonical ones carried along by index.
    """
    if len(canonical) != len(deformed) or len(index_deformed) != len(canonical):
        raise IndexMismatch(
            f"canonical {len(canonical)}, deformed {len(deformed)}, index {len(index_deformed)} points"
        )
    if bending:
        dirs = bend_directions(field, queries, dirs)
    return aggregate(index_deformed, canonical, queries, dirs)


def eval_radiance_deformed(
    canonical: NeuralPointCloud,
    deformed: NeuralPointCloud,
    field: RotationField,
    index_deformed: KdTree,
    x_hat: Sequence[float],
    v_hat: Sequence[float],
    bending: bool = True,
) -> RadianceSample:
    sigma, rgb = radiance_deformed(
        canonical, deformed, field, index_deformed, np.asarray(x_hat)[None], np.asarray(v_hat)[None], bending
    )
    return RadianceSample(sigma=float(sigma[0]), rgb=rgb[0])
