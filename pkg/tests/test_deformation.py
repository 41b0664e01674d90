"""Deformation fields: fitting, application and serialization."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import pytest
import torch

from pointmorph.errors import DivergedFit, FormatError, IoError
from pointmorph.motion.deformation import (
    DeformationField,
    FitOptions,
    KeypointFrame,
    apply_deformation,
    fit_deformation,
    fit_sequence,
    load_field,
    load_keypoints,
    positional_encoding,
    save_field,
    save_keypoints,
)
from tests.conftest import make_cloud

SMALL = FitOptions(lr=5e-3, octaves=2, hidden_layers=2, hidden_units=32, seed=3)


def _translation_frame(rng: np.random.Generator, n: int = 40, t: int = 0) -> KeypointFrame:
    canonical = rng.uniform(-1.0, 1.0, size=(n, 3))
    return KeypointFrame(canonical, canonical + np.array([0.1, -0.05, 0.02]), t)


def test_keypoint_frame_validation() -> None:
    with pytest.raises(ValueError):
        KeypointFrame(np.zeros((3, 3)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        KeypointFrame(np.zeros((5, 3)), np.zeros((4, 3)))
    frame = KeypointFrame(np.zeros((6, 3)), np.ones((6, 3)), 2)
    assert len(frame.subset([0, 1, 2, 3])) == 4


def test_positional_encoding_width() -> None:
    x = torch.zeros((5, 3), dtype=torch.float64)
    assert positional_encoding(x, 4).shape == (5, 3 + 6 * 4)
    assert positional_encoding(x, 0).shape == (5, 3)


def test_untrained_field_is_the_zero_map(rng: np.random.Generator) -> None:
    model = DeformationField.from_bounds([-1.0] * 3, [1.0] * 3, octaves=2, hidden_layers=2, hidden_units=16)
    assert np.array_equal(model.displacement(rng.normal(size=(10, 3))), np.zeros((10, 3)))


def test_fit_reduces_keypoint_error(rng: np.random.Generator) -> None:
    frame = _translation_frame(rng)
    model = fit_deformation(frame, 400, options=SMALL)
    initial_rms = math.sqrt(0.1**2 + 0.05**2 + 0.02**2)
    assert model.keypoint_rms < 0.1 * initial_rms
    assert len(model.loss_history) == 400
    first = np.mean(model.loss_history[:50])
    last = np.mean(model.loss_history[-50:])
    assert last < first


def test_identity_motion_stays_exactly_zero(rng: np.random.Generator) -> None:
    canonical = rng.uniform(-1.0, 1.0, size=(20, 3))
    model = fit_deformation(KeypointFrame(canonical, canonical), 20, options=SMALL)
    assert model.keypoint_rms == 0.0
    assert np.array_equal(model.displacement(canonical), np.zeros_like(canonical))


def test_fit_is_deterministic(rng: np.random.Generator) -> None:
    frame = _translation_frame(rng)
    a = fit_deformation(frame, 50, options=SMALL)
    b = fit_deformation(frame, 50, options=SMALL)
    assert a.loss_history == b.loss_history


def test_non_finite_targets_diverge(rng: np.random.Generator) -> None:
    frame = _translation_frame(rng)
    frame.target_kp[0, 0] = np.nan
    with pytest.raises(DivergedFit):
        fit_deformation(frame, 10, options=SMALL)


def test_fit_sequence_with_warm_start(rng: np.random.Generator) -> None:
    frames = [_translation_frame(np.random.default_rng(0), t=t) for t in range(2)]
    calls = []
    fields = fit_sequence(frames, 30, options=SMALL, warm_start=True, callback=lambda t, i, loss: calls.append(t))
    assert len(fields) == 2
    assert calls.count(0) == 30 and calls.count(1) == 30
    assert fields[1].loss_history[0] < fields[0].loss_history[0]


def test_apply_deformation_moves_only_character_points() -> None:
    cloud = make_cloud(np.zeros((4, 3)), groups=np.array([0, 0, 1, 1], dtype=np.uint8))
    model = DeformationField.from_bounds([-1.0] * 3, [1.0] * 3, octaves=1, hidden_layers=1, hidden_units=4)
    with torch.no_grad():
        model.head.bias.fill_(0.5)
    moved = apply_deformation(model, cloud)
    assert np.allclose(moved.positions[:2], 0.5)
    assert np.array_equal(moved.positions[2:], cloud.positions[2:])
    assert np.array_equal(moved.sh_coeffs, cloud.sh_coeffs)


def test_field_file_roundtrip_and_truncation(tmp_path: Path, rng: np.random.Generator) -> None:
    model = fit_deformation(_translation_frame(rng), 20, options=SMALL)
    path = tmp_path / "field.bin"
    save_field(path, model)
    loaded = load_field(path)
    points = rng.normal(size=(16, 3))
    assert np.array_equal(loaded.displacement(points), model.displacement(points))
    assert loaded.keypoint_rms == model.keypoint_rms

    payload = path.read_bytes()
    path.write_bytes(payload[:-8])
    with pytest.raises(FormatError, match="truncated"):
        load_field(path)
    path.write_bytes(payload + b"\x00")
    with pytest.raises(FormatError, match="trailing"):
        load_field(path)
    with pytest.raises(IoError):
        load_field(tmp_path / "absent.bin")


def test_keypoint_file_roundtrip(tmp_path: Path, rng: np.random.Generator) -> None:
    frames = [_translation_frame(rng, t=t) for t in range(3)]
    save_keypoints(tmp_path / "kp.json", frames)
    loaded = load_keypoints(tmp_path / "kp.json")
    assert [f.t for f in loaded] == [0, 1, 2]
    assert np.array_equal(loaded[2].target_kp, frames[2].target_kp)
