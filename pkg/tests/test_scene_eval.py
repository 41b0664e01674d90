"""Synthetic scenes, camera paths, masked PSNR, ablations and bundles."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import pytest

from pointmorph.errors import BadParams, DimMismatch, EmptyMask, IoError
from pointmorph.evaluation.ablation import STATIC_VARIANT, AblationSettings, run_ablation
from pointmorph.evaluation.bundle import read_bundle, write_bundle
from pointmorph.evaluation.metrics import CSV_COLUMNS, PSNR_CAP_DB, EvalReport, EvalRow, masked_psnr
from pointmorph.evaluation.synthetic import SceneParams, camera_path, generate_scene, sample_keypoints
from pointmorph.geometry.rotations import angular_distance, axis_angle_matrix
from pointmorph.motion.deformation import FitOptions
from pointmorph.radiance.neural_points import GROUP_BACKGROUND, GROUP_CHARACTER
from pointmorph.render.camera import project

TINY = dict(n_points=300, n_keypoints=40, n_train_views=2, image_width=12, image_height=12)


def _settings(**overrides) -> AblationSettings:
    base = dict(
        deform_iters=5,
        fit=FitOptions(octaves=1, hidden_layers=1, hidden_units=8),
        n_samples=12,
    )
    base.update(overrides)
    return AblationSettings(**base)


def test_sphere_points_lie_on_the_unit_sphere() -> None:
    scene = generate_scene("sphere", SceneParams(n_points=1000, sh_degree=0), seed=0)
    assert np.allclose(np.linalg.norm(scene.cloud.positions, axis=1), 1.0, atol=1e-9)
    assert scene.cloud.sh_coeffs.shape == (1000, 3, 1)


def test_generation_is_deterministic() -> None:
    a = generate_scene("articulated_biped", SceneParams(**TINY), seed=7)
    b = generate_scene("articulated_biped", SceneParams(**TINY), seed=7)
    assert np.array_equal(a.cloud.positions, b.cloud.positions)
    assert np.array_equal(a.cloud.sh_coeffs, b.cloud.sh_coeffs)
    assert np.array_equal(a.keypoint_ids, b.keypoint_ids)
    for pa, pb in zip(a.frame_positions, b.frame_positions):
        assert np.array_equal(pa, pb)


def test_limb_at_zero_bend_is_the_canonical_pose() -> None:
    scene = generate_scene("two_segment_limb", SceneParams(**TINY, motion_angles=[0.0, 45.0]), seed=1)
    assert np.allclose(scene.frame_positions[0], scene.cloud.positions, atol=1e-12)
    assert np.max(angular_distance(scene.frame_rotations[0], np.eye(3))) < 1e-12


def test_limb_outer_segment_rotates_rigidly_about_the_joint() -> None:
    params = SceneParams(**TINY, motion_angles=[45.0], joint_band=0.2)
    scene = generate_scene("two_segment_limb", params, seed=2)
    rotation = axis_angle_matrix([0.0, 0.0, 1.0], math.radians(45.0))
    outer = scene.cloud.positions[:, 0] >= 0.1
    inner = scene.cloud.positions[:, 0] <= -0.1
    assert outer.any() and inner.any()
    assert np.allclose(scene.frame_positions[0][outer], scene.cloud.positions[outer] @ rotation.T, atol=1e-12)
    assert np.allclose(scene.frame_positions[0][inner], scene.cloud.positions[inner], atol=1e-12)
    assert np.max(angular_distance(scene.frame_rotations[0][outer], rotation.T)) < 1e-9


def test_room_background_never_moves() -> None:
    scene = generate_scene("box_room_background", SceneParams(**TINY, motion_angles=[0.0, 30.0]), seed=3)
    background = scene.cloud.groups == GROUP_BACKGROUND
    assert background.any() and (scene.cloud.groups == GROUP_CHARACTER).any()
    for positions in scene.frame_positions:
        assert np.array_equal(positions[background], scene.cloud.positions[background])
    assert set(scene.keypoint_ids.tolist()) <= set(np.flatnonzero(~background).tolist())


def test_bad_parameters() -> None:
    with pytest.raises(BadParams):
        generate_scene("teapot", SceneParams(**TINY))
    with pytest.raises(BadParams):
        generate_scene("sphere", SceneParams(**{**TINY, "n_points": 3}))


def test_keypoints_are_a_subset() -> None:
    ids, held_out = sample_keypoints(np.arange(100, 200), 20, seed=0)
    assert len(ids) == 20 and len(held_out) == 80
    assert not set(ids) & set(held_out)
    assert np.array_equal(ids, sample_keypoints(np.arange(100, 200), 20, seed=0)[0])


def test_horizontal_circle_starts_on_positive_x() -> None:
    (cam,) = camera_path("horizontal_circle", 1, 3.0)
    assert np.allclose(cam.position, [3.0, 0.0, 0.0], atol=1e-12)
    assert np.allclose(cam.forward, [-1.0, 0.0, 0.0], atol=1e-12)


@pytest.mark.parametrize("kind", ["sphere_orbit", "horizontal_circle"])
def test_camera_paths_look_at_the_target(kind: str) -> None:
    target = np.array([0.5, -0.2, 0.1])
    cams = camera_path(kind, 9, 2.5, target, width=20, height=10)
    for cam in cams:
        assert math.isclose(np.linalg.norm(cam.position - target), 2.5, abs_tol=1e-9)
        uv, _ = project(cam, target[None])
        assert np.allclose(uv[0], [cam.cx, cam.cy], atol=1e-9)
    heights = [cam.position[2] - target[2] for cam in cams]
    if kind == "horizontal_circle":
        assert np.allclose(heights, 0.0, atol=1e-12)
    else:
        assert max(heights) > 1.5 and min(heights) < -1.5


def test_masked_psnr_examples() -> None:
    a = np.full((4, 4, 3), 0.5)
    mask = np.ones((4, 4), dtype=bool)
    assert masked_psnr(a, a, mask) == (PSNR_CAP_DB, True, 16)

    db, capped, _ = masked_psnr(a, a + 0.1, mask)
    assert math.isclose(db, 20.0, rel_tol=1e-9) and not capped
    assert math.isclose(masked_psnr(a + 0.1, a, mask)[0], db)

    b = a.copy()
    b[0, 0] = 0.0
    partial = mask.copy()
    partial[0, 0] = False
    assert masked_psnr(a, b, partial)[1]
    assert not masked_psnr(a, b, mask)[1]


def test_masked_psnr_decreases_with_noise(rng: np.random.Generator) -> None:
    a = rng.random((8, 8, 3)) * 0.5
    noise = rng.choice([-1.0, 1.0], size=a.shape)
    mask = np.ones((8, 8), dtype=bool)
    values = [masked_psnr(a, a + amp * noise, mask)[0] for amp in (0.01, 0.05, 0.2)]
    assert values[0] > values[1] > values[2]


def test_masked_psnr_errors() -> None:
    a = np.zeros((4, 4, 3))
    with pytest.raises(EmptyMask):
        masked_psnr(a, a, np.zeros((4, 4), dtype=bool))
    with pytest.raises(DimMismatch):
        masked_psnr(a, np.zeros((4, 5, 3)), np.ones((4, 4), dtype=bool))


def test_report_csv_and_table(tmp_path: Path) -> None:
    report = EvalReport()
    report.add(EvalRow(0, "kp20-bend", 20, True, 31.25, 100))
    report.add(EvalRow(1, "kp20-bend", 20, True, 33.25, 90))
    report.add(EvalRow(0, STATIC_VARIANT, 0, False, PSNR_CAP_DB, 80, capped=True))
    report.write_csv(tmp_path / "report.csv")
    lines = (tmp_path / "report.csv").read_text().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert lines[1] == "0,kp20-bend,20,true,31.250000,100"
    assert math.isclose(report.mean_psnr("kp20-bend"), 32.25)
    assert "(cap)" in report.table()


def test_identity_motion_ablation_is_capped() -> None:
    scene = generate_scene("two_segment_limb", SceneParams(**TINY, motion_angles=[0.0]), seed=0)
    report = run_ablation(scene, [20], [True, False], _settings())
    deformed_rows = [row for row in report.rows if row.variant != STATIC_VARIANT]
    assert len(deformed_rows) == 2
    assert all(row.capped and row.psnr_db == PSNR_CAP_DB for row in report.rows)
    assert len(report.select(STATIC_VARIANT)) == 2


def test_bundle_roundtrip(tmp_path: Path) -> None:
    scene = generate_scene("two_segment_limb", SceneParams(**TINY, motion_angles=[0.0, 30.0]), seed=4)
    written = write_bundle(tmp_path / "bundle", scene, _settings())
    assert all(path.exists() for path in written)
    assert (tmp_path / "bundle" / "train" / "view_001.ppm").exists()
    assert (tmp_path / "bundle" / "masks" / "frame_001.pgm").exists()

    bundle = read_bundle(tmp_path / "bundle")
    assert bundle.scene.kind == "two_segment_limb" and bundle.scene.n_frames == 2
    assert np.array_equal(bundle.scene.cloud.positions, scene.cloud.positions)
    assert np.array_equal(bundle.scene.frame_rotations[1], scene.frame_rotations[1])
    assert np.array_equal(bundle.scene.keypoint_ids, scene.keypoint_ids)
    assert bundle.truth_images[1].shape == (12, 12, 3)
    assert bundle.masks[0].any()

    with pytest.raises(IoError):
        read_bundle(tmp_path / "absent")
