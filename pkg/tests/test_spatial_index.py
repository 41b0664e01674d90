"""KD-tree queries against a linear-scan reference."""

from __future__ import annotations

import numpy as np
import pytest

from pointmorph.errors import EmptyPointSet, KTooLarge
from pointmorph.geometry.spatial_index import KdTree, brute_force_knn, build


def test_knn_matches_brute_force(rng: np.random.Generator) -> None:
    points = rng.normal(size=(500, 3))
    tree = build(points, leaf_size=4)
    for query in rng.normal(size=(40, 3)):
        assert tree.knn(query, 7) == brute_force_knn(points, query, 7)


def test_ties_resolve_by_index() -> None:
    """Equidistant points come back lower index first, even across the k-th boundary."""
    points = np.array([[1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0], [0, -1.0, 0], [0, 0, 1.0], [5.0, 5.0, 5.0]])
    tree = KdTree(points, leaf_size=1)
    hits = tree.knn([0.0, 0.0, 0.0], 3)
    assert [i for i, _ in hits] == [0, 1, 2]
    assert all(d == 1.0 for _, d in hits)


def test_knn_on_duplicate_points() -> None:
    points = np.zeros((10, 3))
    tree = KdTree(points)
    assert [i for i, _ in tree.knn([0.0, 0.0, 0.0], 4)] == [0, 1, 2, 3]


def test_radius_query_is_inclusive_and_ordered() -> None:
    points = np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0], [0.5, 0, 0]])
    tree = KdTree(points)
    hits = tree.radius_query([0.0, 0.0, 0.0], 1.0)
    assert [i for i, _ in hits] == [0, 3, 1]
    assert tree.radius_query([10.0, 0.0, 0.0], 1.0) == []


def test_knn_batch_pads_missing_neighbors() -> None:
    points = np.array([[0.0, 0, 0], [1.0, 0, 0]])
    tree = KdTree(points)
    idx, dist = tree.knn_batch(np.array([[0.1, 0, 0], [50.0, 0, 0]]), 3, max_distance=2.0)
    assert idx.tolist() == [[0, 1, -1], [-1, -1, -1]]
    assert np.isinf(dist[0, 2]) and np.all(np.isinf(dist[1]))


def test_knn_batch_agrees_with_single_queries(rng: np.random.Generator) -> None:
    points = np.round(rng.normal(size=(300, 3)), 1)
    tree = KdTree(points, leaf_size=8)
    queries = np.round(rng.normal(size=(50, 3)), 1)
    idx, dist = tree.knn_batch(queries, 5)
    for row, query in enumerate(queries):
        hits = tree.knn(query, 5)
        assert idx[row].tolist() == [i for i, _ in hits]
        assert np.allclose(dist[row], [d for _, d in hits])


def test_nearest_distance(rng: np.random.Generator) -> None:
    points = rng.normal(size=(100, 3))
    tree = KdTree(points)
    queries = rng.normal(size=(10, 3))
    expected = np.min(np.linalg.norm(points[None] - queries[:, None], axis=-1), axis=1)
    assert np.allclose(tree.nearest_distance(queries), expected)
    assert np.all(np.isinf(tree.nearest_distance(queries + 100.0, max_distance=1.0)))


def test_errors() -> None:
    with pytest.raises(EmptyPointSet):
        KdTree(np.empty((0, 3)))
    tree = KdTree(np.zeros((3, 3)))
    with pytest.raises(KTooLarge):
        tree.knn([0.0, 0.0, 0.0], 4)
    with pytest.raises(KTooLarge):
        tree.knn([0.0, 0.0, 0.0], 0)


def _brute_force_radius(points: np.ndarray, query: np.ndarray, radius: float) -> list:
    dist = np.linalg.norm(points - query, axis=-1)
    order = np.lexsort((np.arange(len(points)), dist))
    return [(int(i), float(dist[i])) for i in order if dist[i] <= radius]


def test_knn_on_ten_thousand_points_matches_brute_force(rng: np.random.Generator) -> None:
    points = rng.random((10_000, 3))
    tree = build(points)
    for query in rng.random((60, 3)):
        assert tree.knn(query, 8) == brute_force_knn(points, query, 8)


def test_radius_query_matches_brute_force(rng: np.random.Generator) -> None:
    points = rng.random((2_000, 3))
    tree = build(points, leaf_size=6)
    for query in rng.random((40, 3)):
        radius = float(rng.uniform(0.02, 0.2))
        assert tree.radius_query(query, radius) == _brute_force_radius(points, query, radius)


def test_results_do_not_depend_on_leaf_size(rng: np.random.Generator) -> None:
    points = np.round(rng.normal(size=(800, 3)), 1)
    queries = np.round(rng.normal(size=(30, 3)), 1)
    reference = KdTree(points, leaf_size=16)
    for leaf_size in (1, 2, 7, 64, 1000):
        tree = KdTree(points, leaf_size=leaf_size)
        for query in queries:
            assert tree.knn(query, 6) == reference.knn(query, 6)
            assert tree.radius_query(query, 0.5) == reference.radius_query(query, 0.5)
        idx, dist = tree.knn_batch(queries, 6, max_distance=0.8)
        ref_idx, ref_dist = reference.knn_batch(queries, 6, max_distance=0.8)
        assert np.array_equal(idx, ref_idx) and np.array_equal(dist, ref_dist)


def test_distance_bound_is_inclusive() -> None:
    points = np.array([[0.5, 0, 0], [0.0, 2.0, 0]])
    tree = KdTree(points)
    idx, dist = tree.knn_batch(np.zeros((1, 3)), 2, max_distance=0.5)
    assert idx.tolist() == [[0, -1]]
    assert dist[0, 0] == 0.5
    assert tree.nearest_distance(np.zeros((1, 3)), max_distance=0.5)[0] == 0.5
    assert [i for i, _ in tree.radius_query([0.0, 0.0, 0.0], 0.5)] == [0]
