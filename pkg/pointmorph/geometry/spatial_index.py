"""Static KD-tree with exact, deterministically ordered neighbor queries."""

from __future__ import annotations

from typing import List, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from ..errors import EmptyPointSet, KTooLarge

DEFAULT_LEAF_SIZE = 16

Hit = Tuple[int, float]


class KdTree:
    """Median-split KD-tree over an immutable ``(N, 3)`` point array.

    Results are ordered by Euclidean distance and then by point index, so two
    equidistant points always come back lower index first.
    """

    def __init__(self, points: np.ndarray, leaf_size: int = DEFAULT_LEAF_SIZE) -> None:
        pts = np.array(points, dtype=np.float64, copy=True).reshape(-1, 3)
        if pts.shape[0] == 0:
            raise EmptyPointSet("cannot index an empty point set")
        if leaf_size < 1:
            raise ValueError("leaf_size must be >= 1")
        pts.setflags(write=False)
        self.points = pts
        self.leaf_size = int(leaf_size)
        self._tree = cKDTree(pts, leafsize=self.leaf_size, balanced_tree=True, compact_nodes=True)

    def __len__(self) -> int:
        return self.points.shape[0]

    def _distances(self, query: np.ndarray, indices: np.ndarray) -> np.ndarray:
        return np.linalg.norm(self.points[indices] - query, axis=-1)

    def knn(self, query: Sequence[float], k: int) -> List[Hit]:
        """The ``k`` nearest points as ``(index, distance)`` pairs."""
        q = np.asarray(query, dtype=np.float64).reshape(3)
        n = len(self)
        if not 1 <= k <= n:
            raise KTooLarge(f"k={k} outside [1, {n}]")

        idx, _ = self._query(q[None], min(n, k + 1))
        idx = idx[0]
        dist = self._distances(q, idx)
        order = np.lexsort((idx, dist))
        idx, dist = idx[order], dist[order]

        # Points tied with the k-th distance may lie outside the fetched set.
        if k < n and dist[k] <= dist[k - 1]:
            members = np.asarray(self._tree.query_ball_point(q, dist[k - 1] * (1 + 1e-12) + 1e-300), dtype=np.int64)
            idx = np.union1d(idx, members)
            dist = self._distances(q, idx)
            order = np.lexsort((idx, dist))
            idx, dist = idx[order], dist[order]

        return [(int(i), float(d)) for i, d in zip(idx[:k], dist[:k])]

    def radius_query(self, query: Sequence[float], radius: float) -> List[Hit]:
        """Every point within *radius* (inclusive), ordered like :meth:`knn`."""
        if radius <= 0:
            raise ValueError("radius must be > 0")
        q = np.asarray(query, dtype=np.float64).reshape(3)
        # Slightly widened so the exact filter below decides boundary cases.
        members = np.asarray(self._tree.query_ball_point(q, radius * (1 + 1e-9)), dtype=np.int64)
        if members.size == 0:
            return []
        dist = self._distances(q, members)
        keep = dist <= radius
        members, dist = members[keep], dist[keep]
        order = np.lexsort((members, dist))
        return [(int(i), float(d)) for i, d in zip(members[order], dist[order])]

    def _query(
        self, queries: np.ndarray, k: int, upper_bound: float = np.inf
    ) -> Tuple[np.ndarray, np.ndarray]:
        dist, idx = self._tree.query(queries, k=k, distance_upper_bound=upper_bound)
        return np.asarray(idx, dtype=np.int64).reshape(len(queries), k), np.asarray(dist).reshape(len(queries), k)

    def knn_batch(
        self, queries: np.ndarray, k: int, max_distance: float = np.inf
    ) -> Tuple[np.ndarray, np.ndarray]:
        """Neighbors of many queries at once.

        Returns ``(indices, distances)`` of shape ``(M, k)``. Slots with no
        neighbor within *max_distance* (inclusive) hold index ``-1`` and
        distance ``inf``.
        Rows are ordered by (distance, index).
        """
        q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        n = len(self)
        k_eff = min(k, n)
        if k < 1:
            raise KTooLarge("k must be >= 1")
        if q.shape[0] == 0:
            return np.empty((0, k), dtype=np.int64), np.empty((0, k))

        fetch = min(n, k_eff + 2)
        # cKDTree drops points at exactly the bound; widen it and filter exactly below.
        bound = np.nextafter(max_distance * (1 + 1e-9), np.inf) if np.isfinite(max_distance) else np.inf
        idx, _ = self._query(q, fetch, bound)
        missing = idx >= n
        safe = np.where(missing, 0, idx)
        dist = np.linalg.norm(self.points[safe] - q[:, None, :], axis=-1)
        dist = np.where(missing | (dist > max_distance), np.inf, dist)
        idx = np.where(np.isinf(dist), n, idx)

        order = np.lexsort((idx, dist), axis=-1)
        idx = np.take_along_axis(idx, order, axis=-1)
        dist = np.take_along_axis(dist, order, axis=-1)

        # Rows whose last fetched neighbor ties the k-th are resolved exactly.
        if fetch > k_eff:
            tied = np.isfinite(dist[:, k_eff - 1]) & (dist[:, fetch - 1] <= dist[:, k_eff - 1])
            for row in np.flatnonzero(tied):
                hits = self.knn(q[row], k_eff)
                idx[row, :k_eff] = [h[0] for h in hits]
                dist[row, :k_eff] = [h[1] for h in hits]

        idx, dist = idx[:, :k_eff], dist[:, :k_eff]
        idx = np.where(np.isinf(dist), -1, idx)
        if k_eff < k:
            pad = k - k_eff
            idx = np.pad(idx, ((0, 0), (0, pad)), constant_values=-1)
            dist = np.pad(dist, ((0, 0), (0, pad)), constant_values=np.inf)
        return idx, dist

    def nearest_distance(self, queries: np.ndarray, max_distance: float = np.inf) -> np.ndarray:
        """Distance to the closest point (``inf`` beyond *max_distance*)."""
        q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        if q.shape[0] == 0:
            return np.empty(0)
        _, dist = self.knn_batch(q, 1, max_distance)
        return dist[:, 0]


def build(points: np.ndarray, leaf_size: int = DEFAULT_LEAF_SIZE) -> KdTree:
    return KdTree(points, leaf_size)


def brute_force_knn(points: np.ndarray, query: Sequence[float], k: int) -> List[Hit]:
    """Linear-scan reference with the same ordering rule as :class:`KdTree`."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    dist = np.linalg.norm(pts - np.asarray(query, dtype=np.float64), axis=-1)
    order = np.lexsort((np.arange(len(pts)), dist))[:k]
    return [(int(i), float(dist[i])) for i in order]
