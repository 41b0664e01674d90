"""Binary little-endian PLY storage for neural point clouds.

Layout (one ``vertex`` element, one row per point)::

    x y z density confidence   float64
    group                      uint8   (0 character, 1 background)
    sh_0 .. sh_{3B-1}          float64, channel-major (all R bands, then G, then B)

Header comments carry ``sh_degree``, ``r_agg`` and ``k_agg``.
"""

from __future__ import annotations

import io
import logging
from pathlib import Path
from typing import Dict, List

import numpy as np
from plyfile import PlyData, PlyElement, PlyParseError

from ..errors import FormatError, IoError
from ..io_utils import atomic_write_bytes
from .neural_points import NeuralPointCloud
from .sh import num_bases

logger = logging.getLogger(__name__)

_SCALARS = ["x", "y", "z", "density", "confidence"]


def _sh_names(count: int) -> List[str]:
    return [f"sh_{i}" for i in range(count)]


def save_cloud(path: Path, cloud: NeuralPointCloud) -> None:
    n = len(cloud)
    bases = cloud.sh_coeffs.shape[2]
    sh_names = _sh_names(3 * bases)
    dtype = [(name, "<f8") for name in _SCALARS] + [("group", "u1")] + [(name, "<f8") for name in sh_names]

    vertices = np.empty(n, dtype=dtype)
    for axis, name in enumerate("xyz"):
        vertices[name] = cloud.positions[:, axis]
    vertices["density"] = cloud.density
    vertices["confidence"] = cloud.confidence
    vertices["group"] = cloud.groups
    flat = cloud.sh_coeffs.reshape(n, 3 * bases)
    for i, name in enumerate(sh_names):
        vertices[name] = flat[:, i]

    ply = PlyData(
        [PlyElement.describe(vertices, "vertex")],
        text=False,
        byte_order="<",
        comments=[
            f"sh_degree {cloud.sh_degree}",
            f"r_agg {cloud.r_agg!r}",
            f"k_agg {cloud.k_agg}",
        ],
    )
    buffer = io.BytesIO()
    ply.write(buffer)
    atomic_write_bytes(Path(path), buffer.getvalue())
    logger.debug("wrote %d points to %s", n, path)


def _header_values(ply: PlyData, path: Path) -> Dict[str, str]:
    values: Dict[str, str] = {}
    for comment in ply.comments:
        key, _, value = comment.partition(" ")
        values[key] = value.strip()
    missing = [key for key in ("sh_degree", "r_agg", "k_agg") if key not in values]
    if missing:
        raise FormatError(f"{path}: header lacks comment(s) {missing}")
    return values


def load_cloud(path: Path) -> NeuralPointCloud:
    path = Path(path)
    if not path.exists():
        raise IoError(f"missing input: {path}")
    try:
        with path.open("rb") as handle:
            ply = PlyData.read(handle, mmap=False)
    except PlyParseError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    except (ValueError, EOFError) as exc:
        raise FormatError(f"{path}: unreadable PLY body ({exc})") from exc
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc

    if "vertex" not in [el.name for el in ply.elements]:
        raise FormatError(f"{path}: no vertex element")
    vertex = ply["vertex"]
    header = _header_values(ply, path)
    try:
        degree = int(header["sh_degree"])
        r_agg = float(header["r_agg"])
        k_agg = int(header["k_agg"])
    except ValueError as exc:
        raise FormatError(f"{path}: bad header comment ({exc})") from exc

    names = {prop.name for prop in vertex.properties}
    sh_count = sum(1 for name in names if name.startswith("sh_"))
    if sh_count == 0:
        raise FormatError(f"{path}: cloud has no SH coefficients (need B >= 1)")
    bases = num_bases(degree)
    if sh_count != 3 * bases:
        raise FormatError(f"{path}: sh_degree {degree} needs {3 * bases} coefficients, found {sh_count}")
    required = _SCALARS + ["group"] + _sh_names(sh_count)
    absent = [name for name in required if name not in names]
    if absent:
        raise FormatError(f"{path}: missing vertex properties {absent}")

    data = vertex.data
    n = len(data)
    sh = np.stack([np.asarray(data[name], dtype=np.float64) for name in _sh_names(sh_count)], axis=1)
    try:
        return NeuralPointCloud(
            positions=np.stack([np.asarray(data[a], dtype=np.float64) for a in "xyz"], axis=1),
            sh_coeffs=sh.reshape(n, 3, bases),
            density=np.asarray(data["density"], dtype=np.float64),
            confidence=np.asarray(data["confidence"], dtype=np.float64),
            groups=np.asarray(data["group"], dtype=np.uint8),
            r_agg=r_agg,
            k_agg=k_agg,
        )
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
