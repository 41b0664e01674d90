"""Rotation-field estimation and view-direction bending."""

from __future__ import annotations

import math

import numpy as np
import pytest

from pointmorph.errors import IndexMismatch
from pointmorph.evaluation.synthetic import fibonacci_sphere
from pointmorph.geometry.rotations import (
    angular_distance,
    axis_angle_matrix,
    inverse_distance_weights,
    nlerp_rotations,
    quat_to_rot,
)
from pointmorph.motion.ray_bending import bend_direction, bend_directions, eval_radiance_deformed, radiance_deformed
from pointmorph.motion.rotation_field import RotationField, estimate_rotation_field
from pointmorph.radiance.sh import num_bases
from tests.conftest import make_cloud, random_rotation


def _rotated_pair(rng: np.random.Generator, n: int = 800, degree: int = 0):
    canonical = make_cloud(fibonacci_sphere(n), degree=degree, r_agg=0.25)
    rotation = random_rotation(rng)
    deformed = canonical.with_positions(canonical.positions @ rotation.T)
    return canonical, deformed, rotation


def test_global_rotation_is_recovered_everywhere(rng: np.random.Generator) -> None:
    canonical, deformed, rotation = _rotated_pair(rng)
    field = estimate_rotation_field(canonical, deformed, k_rot=8)
    assert field.degenerate == 0
    assert np.max(angular_distance(field.rotations, rotation.T)) < 1e-6


def test_estimation_is_independent_of_thread_count(rng: np.random.Generator) -> None:
    canonical, deformed, _ = _rotated_pair(rng)
    single = estimate_rotation_field(canonical, deformed, 8, threads=1)
    pooled = estimate_rotation_field(canonical, deformed, 8, threads=4)
    assert np.array_equal(single.quats, pooled.quats)


def test_bent_direction_undoes_the_motion(rng: np.random.Generator) -> None:
    canonical, deformed, rotation = _rotated_pair(rng)
    field = estimate_rotation_field(canonical, deformed, 8)
    v = np.array([0.3, -0.4, 0.866])
    v /= np.linalg.norm(v)
    bent = bend_direction(field, deformed.positions[17] * 0.99, v)
    assert np.allclose(bent, rotation.T @ v, atol=1e-6)
    assert math.isclose(np.linalg.norm(bent), 1.0, abs_tol=1e-12)


def test_directions_pass_through_far_from_the_cloud() -> None:
    positions = fibonacci_sphere(100)
    field = RotationField.from_rotations(
        np.broadcast_to(axis_angle_matrix([0, 0, 1], 1.0), (100, 3, 3)), positions, 8, radius=0.3
    )
    v = np.array([1.0, 0.0, 0.0])
    assert np.array_equal(bend_direction(field, [10.0, 0.0, 0.0], v), v)
    assert not np.allclose(bend_direction(field, positions[0], v), v)


def test_exact_hit_uses_that_rotation() -> None:
    positions = np.array([[0.0, 0, 0], [1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]])
    rotations = np.stack([np.eye(3)] + [axis_angle_matrix([0, 0, 1], 0.5)] * 3)
    field = RotationField.from_rotations(rotations, positions, 4)
    v = np.array([1.0, 0.0, 0.0])
    assert np.allclose(bend_direction(field, [1.0, 0.0, 0.0], v), rotations[1] @ v)
    assert np.allclose(bend_direction(field, [0.0, 0.0, 0.0], v), v)


def test_batched_bending_matches_single_queries(rng: np.random.Generator) -> None:
    canonical, deformed, _ = _rotated_pair(rng)
    field = estimate_rotation_field(canonical, deformed, 8)
    positions = deformed.positions[:10] * 1.01
    dirs = rng.normal(size=(10, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    batch = bend_directions(field, positions, dirs)
    for i in range(10):
        assert np.allclose(batch[i], bend_direction(field, positions[i], dirs[i]))


def test_identity_field_quaternions() -> None:
    field = RotationField.identity(fibonacci_sphere(10))
    assert np.allclose(quat_to_rot(field.quats[3]), np.eye(3))


def test_view_independent_radiance_ignores_bending(rng: np.random.Generator) -> None:
    canonical, deformed, rotation = _rotated_pair(rng, degree=0)
    field = RotationField.from_rotations(np.broadcast_to(rotation.T, (len(deformed), 3, 3)), deformed.positions)
    index = deformed.build_index()
    queries = deformed.positions[:20] * 1.02
    dirs = np.tile([0.0, 0.0, 1.0], (20, 1))
    bent = radiance_deformed(canonical, deformed, field, index, queries, dirs, bending=True)
    straight = radiance_deformed(canonical, deformed, field, index, queries, dirs, bending=False)
    assert np.array_equal(bent[0], straight[0]) and np.array_equal(bent[1], straight[1])


def test_bending_reproduces_canonical_view_dependent_radiance(rng: np.random.Generator) -> None:
    """Querying the moved cloud along a moved ray answers like the canonical query."""
    canonical, deformed, rotation = _rotated_pair(rng, degree=2)
    canonical.sh_coeffs[:, :, 1:] = rng.normal(size=(3, num_bases(2) - 1)) * 0.3
    field = RotationField.from_rotations(np.broadcast_to(rotation.T, (len(deformed), 3, 3)), deformed.positions)
    x = canonical.positions[5] * 1.01
    v = np.array([0.0, 0.6, 0.8])
    expected = eval_radiance_deformed(canonical, canonical, RotationField.identity(canonical.positions),
                                      canonical.build_index(), x, v, bending=False)
    sample = eval_radiance_deformed(canonical, deformed, field, deformed.build_index(), rotation @ x, rotation @ v)
    assert np.allclose(sample.rgb, expected.rgb, atol=1e-9)
    assert math.isclose(sample.sigma, expected.sigma, rel_tol=1e-9)


def test_mismatched_clouds_are_rejected(rng: np.random.Generator) -> None:
    canonical, deformed, _ = _rotated_pair(rng, n=50)
    smaller = make_cloud(deformed.positions[:40])
    with pytest.raises(IndexMismatch):
        estimate_rotation_field(canonical, smaller)
    field = RotationField.identity(deformed.positions)
    with pytest.raises(IndexMismatch):
        radiance_deformed(canonical, smaller, field, smaller.build_index(), np.zeros((1, 3)), np.ones((1, 3)))


def test_blend_spans_k_nearest_beyond_the_passthrough_radius() -> None:
    """Only the nearest point must lie inside the radius; the blend still uses all k_rot neighbors."""
    positions = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1.0, 0], [5.0, 5.0, 5.0]])
    quarter = axis_angle_matrix([0.0, 0.0, 1.0], math.pi / 2)
    rotations = np.stack([np.eye(3), quarter, quarter, np.eye(3)])
    field = RotationField.from_rotations(rotations, positions, 3, radius=0.3)

    bent = bend_direction(field, [0.2, 0.0, 0.0], [1.0, 0.0, 0.0])
    weights = inverse_distance_weights([0.2, 0.8, math.hypot(0.2, 1.0)])
    expected = quat_to_rot(nlerp_rotations(field.quats[:3], weights)) @ np.array([1.0, 0.0, 0.0])
    assert np.allclose(bent, expected, atol=1e-12)
    assert np.allclose(bent, [0.891, 0.454, 0.0], atol=1e-3)


def test_estimation_is_equivariant_under_a_shared_rotation(rng: np.random.Generator) -> None:
    points = rng.normal(size=(400, 3))
    canonical = make_cloud(points / np.linalg.norm(points, axis=1, keepdims=True), r_agg=0.3)
    still = estimate_rotation_field(canonical, canonical, 8)
    assert np.max(angular_distance(still.rotations, np.eye(3))) < 1e-9

    q = random_rotation(rng)
    turned = canonical.with_positions(canonical.positions @ q.T)
    assert np.max(angular_distance(estimate_rotation_field(turned, turned, 8).rotations, np.eye(3))) < 1e-9

    twist = np.stack([axis_angle_matrix([0.0, 0.0, 1.0], 0.4 * z) for z in canonical.positions[:, 2]])
    deformed = canonical.with_positions(np.einsum("nij,nj->ni", twist, canonical.positions))
    base = estimate_rotation_field(canonical, deformed, 8)
    moved = estimate_rotation_field(turned, deformed.with_positions(deformed.positions @ q.T), 8)
    assert np.max(angular_distance(moved.rotations, q @ base.rotations @ q.T)) < 1e-6


def test_bending_is_consistent_under_rotation_and_translation(rng: np.random.Generator) -> None:
    canonical, _, _ = _rotated_pair(rng, degree=2)
    canonical.sh_coeffs[:, :, 1:] = rng.normal(size=(3, num_bases(2) - 1)) * 0.3
    rotation = random_rotation(rng)
    shift = np.array([0.7, -1.2, 2.5])
    deformed = canonical.with_positions(canonical.positions @ rotation.T + shift)
    field = RotationField.from_rotations(np.broadcast_to(rotation.T, (len(deformed), 3, 3)), deformed.positions)

    x = canonical.positions[11] * 1.01
    v = np.array([0.48, 0.0, 0.877])
    v /= np.linalg.norm(v)
    expected = eval_radiance_deformed(canonical, canonical, RotationField.identity(canonical.positions),
                                      canonical.build_index(), x, v, bending=False)
    sample = eval_radiance_deformed(canonical, deformed, field, deformed.build_index(), rotation @ x + shift, rotation @ v)
    assert np.allclose(sample.rgb, expected.rgb, atol=1e-9)
    assert math.isclose(sample.sigma, expected.sigma, rel_tol=1e-9)
