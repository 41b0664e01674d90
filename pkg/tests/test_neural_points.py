"""Radiance aggregation, compositing of clouds and SH evaluation."""

from __future__ import annotations

import math

import numpy as np
import pytest

from pointmorph.errors import EmptyGroup
from pointmorph.geometry.spatial_index import KdTree
from pointmorph.radiance.neural_points import (
    GROUP_BACKGROUND,
    GROUP_CHARACTER,
    NeuralPointCloud,
    aggregate,
    bounding_box,
    composite,
    default_aggregation_radius,
    eval_radiance,
)
from pointmorph.radiance.sh import dc_to_rgb, eval_sh, num_bases, rgb_to_dc
from tests.conftest import make_cloud


def test_eval_radiance_exact_hit_takes_that_point() -> None:
    cloud = make_cloud([[0.0, 0, 0], [0.1, 0, 0]], r_agg=1.0)
    cloud.sh_coeffs[1, :, 0] = rgb_to_dc(np.array([0.0, 1.0, 0.0]))
    cloud.density[1] = 5.0
    sample = eval_radiance(cloud, cloud.build_index(), [0.1, 0.0, 0.0], [0.0, 0.0, 1.0])
    assert np.allclose(sample.rgb, [0.0, 1.0, 0.0])
    assert math.isclose(sample.sigma, 5.0)


def test_eval_radiance_outside_radius_is_empty() -> None:
    cloud = make_cloud([[0.0, 0, 0]], r_agg=0.5)
    sample = eval_radiance(cloud, cloud.build_index(), [2.0, 0.0, 0.0], [0.0, 0.0, 1.0])
    assert sample.sigma == 0.0
    assert np.allclose(sample.rgb, 0.0)


def test_density_falls_off_with_nearest_distance() -> None:
    cloud = make_cloud([[0.0, 0, 0]], density=10.0, r_agg=1.0)
    sample = eval_radiance(cloud, cloud.build_index(), [0.5, 0.0, 0.0], [1.0, 0.0, 0.0])
    assert math.isclose(sample.sigma, 10.0 * math.exp(-0.25), rel_tol=1e-12)


def test_confidence_scales_blend_weights() -> None:
    cloud = make_cloud([[-1.0, 0, 0], [1.0, 0, 0]], r_agg=3.0)
    cloud.sh_coeffs[0, :, 0] = rgb_to_dc(np.array([1.0, 0.0, 0.0]))
    cloud.sh_coeffs[1, :, 0] = rgb_to_dc(np.array([0.0, 0.0, 1.0]))
    cloud.confidence[1] = 0.5
    sample = eval_radiance(cloud, cloud.build_index(), [0.0, 0.0, 0.0], [0.0, 0.0, 1.0])
    assert np.allclose(sample.rgb, [2.0 / 3.0, 0.0, 1.0 / 3.0])


def test_aggregate_uses_moved_index_with_canonical_features() -> None:
    cloud = make_cloud([[0.0, 0, 0], [5.0, 0, 0]], r_agg=0.5)
    moved = KdTree(cloud.positions + np.array([10.0, 0.0, 0.0]))
    sigma, rgb = aggregate(moved, cloud, np.array([[10.0, 0, 0], [0.0, 0, 0]]), np.tile([0.0, 0, 1], (2, 1)))
    assert sigma[0] > 0.0 and sigma[1] == 0.0
    assert np.allclose(rgb[0], [0.6, 0.3, 0.2])


def test_sh_degree_zero_is_view_independent(rng: np.random.Generator) -> None:
    sh = rng.normal(size=(3, num_bases(0)))
    dirs = rng.normal(size=(5, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    values = np.stack([eval_sh(0, sh, d) for d in dirs])
    assert np.allclose(values, values[0])
    assert np.allclose(dc_to_rgb(rgb_to_dc(np.array([0.2, 0.4, 0.6]))), [0.2, 0.4, 0.6])


def test_sh_first_band_is_linear_in_direction() -> None:
    sh = np.zeros((1, num_bases(1)))
    sh[0, 2] = 1.0  # z band
    up = eval_sh(1, sh, np.array([0.0, 0.0, 1.0]))
    down = eval_sh(1, sh, np.array([0.0, 0.0, -1.0]))
    assert math.isclose(float(up[0]), -float(down[0]))


def test_composite_preserves_labels_and_order() -> None:
    character = make_cloud(np.zeros((3, 3)))
    background = make_cloud(np.ones((2, 3)), groups=np.full(2, GROUP_BACKGROUND, dtype=np.uint8))
    merged = composite(character, background)
    assert merged.groups.tolist() == [GROUP_CHARACTER] * 3 + [GROUP_BACKGROUND] * 2
    assert np.allclose(merged.positions[3:], 1.0)
    assert len(composite(character)) == 3

    with pytest.raises(ValueError):
        composite(character, make_cloud(np.ones((2, 3)), degree=1))


def test_bounding_box_of_group() -> None:
    cloud = make_cloud([[0.0, 0, 0], [1.0, 2.0, 3.0], [9.0, 9.0, 9.0]], groups=np.array([0, 0, 1], dtype=np.uint8))
    lo, hi = bounding_box(cloud, "character")
    assert lo.tolist() == [0.0, 0.0, 0.0] and hi.tolist() == [1.0, 2.0, 3.0]
    with pytest.raises(EmptyGroup):
        bounding_box(make_cloud(np.zeros((2, 3))), "background")


def test_cloud_validation() -> None:
    with pytest.raises(ValueError):
        make_cloud(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        make_cloud(np.zeros((2, 3)), density=-1.0)
    cloud = make_cloud(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        NeuralPointCloud(cloud.positions, cloud.sh_coeffs[:, :, :0], cloud.density, cloud.confidence, cloud.groups, 1.0)


def test_default_aggregation_radius_scales_spacing() -> None:
    grid = np.stack(np.meshgrid(np.arange(4.0), np.arange(4.0), np.arange(4.0)), axis=-1).reshape(-1, 3) * 0.2
    assert math.isclose(default_aggregation_radius(grid, 2.5), 0.5)
    assert default_aggregation_radius(np.zeros((1, 3)), 2.5) == 2.5


def test_point_exactly_at_the_aggregation_radius_contributes() -> None:
    cloud = make_cloud([[0.0, 0, 0]], density=10.0, r_agg=0.5)
    sample = eval_radiance(cloud, cloud.build_index(), [0.5, 0.0, 0.0], [1.0, 0.0, 0.0])
    assert math.isclose(sample.sigma, 10.0 * math.exp(-1.0), rel_tol=1e-12)
    assert np.allclose(sample.rgb, [0.6, 0.3, 0.2])
