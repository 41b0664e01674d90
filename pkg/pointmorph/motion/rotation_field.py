"""Per-point local rotations between a canonical and a deformed cloud."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import IndexMismatch
from ..geometry.rotations import kabsch_rotations, quats_to_rots, rots_to_quats
from ..geometry.spatial_index import DEFAULT_LEAF_SIZE, KdTree
from ..radiance.neural_points import NeuralPointCloud

logger = logging.getLogger(__name__)

DEFAULT_K_ROT = 8
CHUNK = 8192


@dataclass
class RotationField:
    """Unit quaternions index-aligned with a deformed cloud.

    Each rotation maps deformed-space directions at that point back to
    canonical space. Queries blend the ``k_rot`` nearest rotations; a sample
    whose nearest point lies beyond ``radius`` keeps its direction unchanged.
    """

    quats: np.ndarray  # (N, 4) wxyz
    index: KdTree  # over deformed positions
    k_rot: int = DEFAULT_K_ROT
    radius: float = np.inf
    degenerate: int = 0

    def __post_init__(self) -> None:
        self.quats = np.asarray(self.quats, dtype=np.float64).reshape(-1, 4)
        if self.quats.shape[0] != len(self.index):
            raise IndexMismatch(f"{self.quats.shape[0]} rotations for {len(self.index)} points")
        if self.k_rot < 1:
            raise ValueError("k_rot must be >= 1")
        if not np.allclose(np.linalg.norm(self.quats, axis=1), 1.0, atol=1e-9):
            raise ValueError("rotation field quaternions must be unit length")

    def __len__(self) -> int:
        return self.quats.shape[0]

    @property
    def rotations(self) -> np.ndarray:
        return quats_to_rots(self.quats)

    @classmethod
    def identity(
        cls, positions: np.ndarray, k_rot: int = DEFAULT_K_ROT, radius: float = np.inf
    ) -> "RotationField":
        index = positions if isinstance(positions, KdTree) else KdTree(positions)
        quats = np.zeros((len(index), 4))
        quats[:, 0] = 1.0
        return cls(quats, index, k_rot, radius)

    @classmethod
    def from_rotations(
        cls, rotations: np.ndarray, positions: np.ndarray, k_rot: int = DEFAULT_K_ROT, radius: float = np.inf
    ) -> "RotationField":
        return cls(rots_to_quats(rotations), KdTree(positions), k_rot, radius)


def estimate_rotation_field(
    canonical: NeuralPointCloud,
    deformed: NeuralPointCloud,
    k_rot: int = DEFAULT_K_ROT,
    *,
    index: Optional[KdTree] = None,
    leaf_size: int = DEFAULT_LEAF_SIZE,
    threads: int = 1,
) -> RotationField:
    """Kabsch rotation for every deformed point from its ``k_rot`` deformed-space neighbors.

    Each neighborhood is centered on the point itself in both clouds; the
    canonical cluster uses the same indices. Rank-deficient neighborhoods get
    the identity.
    """
    if len(canonical) != len(deformed):
        raise IndexMismatch(f"canonical has {len(canonical)} points, deformed has {len(deformed)}")
    if k_rot < 3:
        raise ValueError("k_rot must be >= 3")

    index = index if index is not None else deformed.build_index(leaf_size)
    n = len(deformed)
    radius = deformed.r_agg
    if n < 3:
        logger.warning("only %d points; rotation field is the identity", n)
        return RotationField.identity(index, k_rot, radius)

    k = min(k_rot, n)
    rotations = np.empty((n, 3, 3))
    valid = np.empty(n, dtype=bool)

    def work(start: int) -> None:
        stop = min(start + CHUNK, n)
        idx, _ = index.knn_batch(deformed.positions[start:stop], k)
        rotations[start:stop], valid[start:stop] = kabsch_rotations(
            canonical.positions[idx],
            deformed.positions[idx],
            canonical.positions[start:stop],
            deformed.positions[start:stop],
        )

    starts = range(0, n, CHUNK)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, starts))
    else:
        for start in starts:
            work(start)

    degenerate = int(np.count_nonzero(~valid))
    if degenerate:
        logger.warning("%d of %d neighborhoods were degenerate; using identity rotations", degenerate, n)
    return RotationField(rots_to_quats(rotations, check=False), index, k_rot, radius, degenerate)
