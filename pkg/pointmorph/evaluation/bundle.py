"""Scene bundles: a generated scene and its reference images on disk.

Layout under the bundle root::

    cloud_gt.ply                 canonical ground-truth cloud
    keypoints.json               keypoint frames (canonical and target positions)
    cameras.json                 {"train": [...], "test": [...]}
    train/view_XXX.ppm           training images of the canonical scene
    truth/frame_XXX.ppm          ground-truth image of motion frame XXX
    masks/frame_XXX.pgm          projected character box of frame XXX
    frames/deformed_gt_XXX.ply   ground-truth deformed cloud of frame XXX
    frames/rotations_gt_XXX.npy  ground-truth deformed-to-canonical rotations
    manifest.json                scene record plus output digests
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List

import numpy as np

from ..errors import FormatError, IoError
from ..io_utils import MANIFEST_NAME, atomic_write_bytes, digest_outputs, read_json, update_manifest, write_json
from ..motion.deformation import load_keypoints, save_keypoints
from ..radiance.ply_io import load_cloud, save_cloud
from ..render.camera import Camera
from ..render.image_io import read_image, read_mask, write_pgm_mask, write_ppm
from .ablation import AblationSettings, frame_masks, render_training_views, render_truth
from .synthetic import SceneParams, SyntheticScene

logger = logging.getLogger(__name__)

CLOUD_NAME = "cloud_gt.ply"
KEYPOINTS_NAME = "keypoints.json"
CAMERAS_NAME = "cameras.json"


@dataclass
class SceneBundle:
    root: Path
    scene: SyntheticScene
    train_images: List[np.ndarray]
    truth_images: List[np.ndarray]
    masks: List[np.ndarray]


def train_path(root: Path, view: int) -> Path:
    return Path(root) / "train" / f"view_{view:03d}.ppm"


def truth_path(root: Path, t: int) -> Path:
    return Path(root) / "truth" / f"frame_{t:03d}.ppm"


def mask_path(root: Path, t: int) -> Path:
    return Path(root) / "masks" / f"frame_{t:03d}.pgm"


def deformed_gt_path(root: Path, t: int) -> Path:
    return Path(root) / "frames" / f"deformed_gt_{t:03d}.ply"


def rotations_gt_path(root: Path, t: int) -> Path:
    return Path(root) / "frames" / f"rotations_gt_{t:03d}.npy"


def save_array(path: Path, array: np.ndarray) -> None:
    buffer = io.BytesIO()
    np.save(buffer, np.ascontiguousarray(array, dtype="<f8"), allow_pickle=False)
    atomic_write_bytes(Path(path), buffer.getvalue())


def load_array(path: Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise IoError(f"missing input: {path}")
    try:
        return np.load(path, allow_pickle=False)
    except (ValueError, EOFError, OSError) as exc:
        raise FormatError(f"{path}: not a numpy array file ({exc})") from exc


def write_bundle(root: Path, scene: SyntheticScene, settings: AblationSettings) -> List[Path]:
    """Write *scene* and its rendered reference images under *root*."""
    root = Path(root)
    written: List[Path] = []

    save_cloud(root / CLOUD_NAME, scene.cloud)
    save_keypoints(root / KEYPOINTS_NAME, scene.keypoint_frames())
    write_json(
        root / CAMERAS_NAME,
        {"train": [c.to_dict() for c in scene.train_cameras], "test": [c.to_dict() for c in scene.test_cameras]},
    )
    written += [root / CLOUD_NAME, root / KEYPOINTS_NAME, root / CAMERAS_NAME]

    for view, image in enumerate(render_training_views(scene.cloud, scene, settings)):
        write_ppm(train_path(root, view), image)
        written.append(train_path(root, view))

    for t, mask in enumerate(frame_masks(scene)):
        save_cloud(deformed_gt_path(root, t), scene.deformed_cloud(t))
        save_array(rotations_gt_path(root, t), scene.frame_rotations[t])
        write_ppm(truth_path(root, t), render_truth(scene, t, settings))
        write_pgm_mask(mask_path(root, t), mask)
        written += [deformed_gt_path(root, t), rotations_gt_path(root, t), truth_path(root, t), mask_path(root, t)]
        logger.info("bundle frame %d written", t)

    update_manifest(
        root,
        {
            "scene": {
                "kind": scene.kind,
                "seed": scene.seed,
                "params": scene.params.to_dict(),
                "diagonal": scene.diagonal,
                "n_frames": scene.n_frames,
                "keypoint_ids": scene.keypoint_ids.tolist(),
            },
            "generate": {"outputs": digest_outputs(written, root)},
        },
    )
    return written


def _scene_record(root: Path) -> Dict[str, Any]:
    manifest = read_json(root / MANIFEST_NAME)
    try:
        record = manifest["scene"]
        _ = record["kind"], record["seed"], record["params"], record["diagonal"], record["n_frames"]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{root / MANIFEST_NAME}: no scene record ({exc})") from exc
    return record


def read_bundle(root: Path) -> SceneBundle:
    root = Path(root)
    if not root.is_dir():
        raise IoError(f"missing bundle directory: {root}")
    record = _scene_record(root)
    n_frames = int(record["n_frames"])

    cloud = load_cloud(root / CLOUD_NAME)
    cameras = read_json(root / CAMERAS_NAME)
    try:
        train_cameras = [Camera.from_dict(c) for c in cameras["train"]]
        test_cameras = [Camera.from_dict(c) for c in cameras["test"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{root / CAMERAS_NAME}: bad camera record ({exc})") from exc
    if len(test_cameras) != n_frames:
        raise FormatError(f"{root / CAMERAS_NAME}: {len(test_cameras)} test cameras for {n_frames} frames")
    if len(load_keypoints(root / KEYPOINTS_NAME)) != n_frames:
        raise FormatError(f"{root / KEYPOINTS_NAME}: frame count does not match the manifest")

    frame_positions, frame_rotations = [], []
    for t in range(n_frames):
        deformed = load_cloud(deformed_gt_path(root, t))
        rotations = load_array(rotations_gt_path(root, t))
        if len(deformed) != len(cloud) or rotations.shape != (len(cloud), 3, 3):
            raise FormatError(f"frame {t}: ground truth is not index-aligned with {CLOUD_NAME}")
        frame_positions.append(deformed.positions)
        frame_rotations.append(rotations)

    scene = SyntheticScene(
        kind=record["kind"],
        seed=int(record["seed"]),
        params=SceneParams(**record["params"]),
        cloud=cloud,
        keypoint_ids=np.asarray(record.get("keypoint_ids", []), dtype=np.int64),
        frame_positions=frame_positions,
        frame_rotations=frame_rotations,
        train_cameras=train_cameras,
        test_cameras=test_cameras,
        diagonal=float(record["diagonal"]),
    )
    return SceneBundle(
        root=root,
        scene=scene,
        train_images=[read_image(train_path(root, v)) for v in range(len(train_cameras))],
        truth_images=[read_image(truth_path(root, t)) for t in range(n_frames)],
        masks=[read_mask(mask_path(root, t)) for t in range(n_frames)],
    )
