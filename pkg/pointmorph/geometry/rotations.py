"""Rotation utilities: Kabsch estimation, quaternion conversion and blending.

Conventions used throughout the package:

* vectors are float64 numpy arrays of shape ``(3,)`` (or stacked ``(..., 3)``);
* quaternions are ``(w, x, y, z)`` arrays, normalized, on the ``w >= 0``
  hemisphere after every conversion;
* a local rotation ``R`` maps deformed-space vectors to canonical-space
  vectors, so a bent view direction is ``R @ v_hat``.
"""

from __future__ import annotations

from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from ..errors import DegenerateBlend, DegenerateCluster, EmptyInput, NotARotation

EPS_ZERO = 1e-9  # distances at or below this count as an exact hit
RANK_TOL = 1e-9  # relative singular-value floor for a rank-2 cross-covariance
ORTHO_TOL = 1e-6
BLEND_TOL = 1e-9


def as_vec3(value: Sequence[float] | np.ndarray) -> np.ndarray:
    vec = np.asarray(value, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(vec)):
        raise ValueError(f"non-finite vector: {vec}")
    return vec


def normalize(vectors: np.ndarray) -> np.ndarray:
    """Scale vectors along the last axis to unit length."""
    vectors = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(vectors, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError("cannot normalize a zero vector")
    return vectors / norms


def axis_angle_matrix(axis: Sequence[float], angle: float) -> np.ndarray:
    """Proper rotation by *angle* radians about *axis*."""
    unit = normalize(np.asarray(axis, dtype=np.float64))
    return Rotation.from_rotvec(unit * float(angle)).as_matrix()


def angular_distance(r_a: np.ndarray, r_b: np.ndarray) -> np.ndarray:
    """Geodesic angle in radians between rotation matrices (broadcasts)."""
    rel = np.einsum("...ji,...jk->...ik", np.asarray(r_a), np.asarray(r_b))
    return Rotation.from_matrix(rel.reshape(-1, 3, 3)).magnitude().reshape(rel.shape[:-2])


def kabsch_rotations(
    canonical: np.ndarray,
    deformed: np.ndarray,
    canonical_centers: np.ndarray,
    deformed_centers: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray]:
    """Batched Kabsch over ``M`` corresponded clusters of ``k`` points.

    Returns the rotations ``(M, 3, 3)`` and a validity mask; rank-deficient
    clusters get the identity and ``False``.
    """
    a = np.asarray(canonical, dtype=np.float64) - np.asarray(canonical_centers)[:, None, :]
    b = np.asarray(deformed, dtype=np.float64) - np.asarray(deformed_centers)[:, None, :]
    cov = np.einsum("mki,mkj->mij", a, b)

    u, s, vt = np.linalg.svd(cov)
    valid = (s[:, 0] > 0.0) & (s[:, 1] > RANK_TOL * s[:, 0])

    flip = np.linalg.det(u @ vt) < 0.0
    u[flip, :, 2] *= -1.0
    rotations = u @ vt
    rotations[~valid] = np.eye(3)
    return rotations, valid


def kabsch_rotation(
    canonical_cluster: Sequence[Sequence[float]] | np.ndarray,
    deformed_cluster: Sequence[Sequence[float]] | np.ndarray,
    canonical_center: Optional[Sequence[float]] = None,
    deformed_center: Optional[Sequence[float]] = None,
) -> np.ndarray:
    """Least-squares proper rotation taking deformed offsets onto canonical ones.

    Each cluster is centered on its center point (the centroid when no center
    is given) before the 3x3 cross-covariance is formed.
    """
    canonical = np.asarray(canonical_cluster, dtype=np.float64)
    deformed = np.asarray(deformed_cluster, dtype=np.float64)
    if canonical.shape != deformed.shape or canonical.ndim != 2 or canonical.shape[1] != 3:
        raise ValueError(
            f"clusters must both be (k, 3); got {canonical.shape} and {deformed.shape}"
        )
    if canonical.shape[0] < 3:
        raise DegenerateCluster(f"need at least 3 points per cluster, got {canonical.shape[0]}")

    c_can = canonical.mean(axis=0) if canonical_center is None else as_vec3(canonical_center)
    c_def = deformed.mean(axis=0) if deformed_center is None else as_vec3(deformed_center)

    rotations, valid = kabsch_rotations(
        canonical[None], deformed[None], c_can[None], c_def[None]
    )
    if not valid[0]:
        raise DegenerateCluster("cross-covariance has rank < 2 (collinear or coincident points)")
    return rotations[0]


def canonical_hemisphere(quats: np.ndarray) -> np.ndarray:
    """Flip quaternions onto ``w >= 0``; ties at ``w == 0`` go to the first nonzero axis."""
    quats = np.asarray(quats, dtype=np.float64)
    sign = np.ones(quats.shape[:-1])
    for axis in (3, 2, 1, 0):
        comp = quats[..., axis]
        sign = np.where(comp != 0.0, np.sign(comp), sign)
    return quats * sign[..., None]


def check_rotation(matrices: np.ndarray) -> None:
    if matrices.shape[-2:] != (3, 3) or not np.all(np.isfinite(matrices)):
        raise NotARotation("expected finite 3x3 matrices")
    gram = np.einsum("...ij,...kj->...ik", matrices, matrices)
    if np.max(np.abs(gram - np.eye(3))) > ORTHO_TOL:
        raise NotARotation("matrix is not orthogonal")
    if np.any(np.linalg.det(matrices) <= 0.0):
        raise NotARotation("matrix has negative determinant")


def rots_to_quats(matrices: np.ndarray, check: bool = True) -> np.ndarray:
    matrices = np.asarray(matrices, dtype=np.float64)
    if check:
        check_rotation(matrices)
    xyzw = Rotation.from_matrix(matrices.reshape(-1, 3, 3)).as_quat()
    wxyz = np.concatenate([xyzw[:, 3:], xyzw[:, :3]], axis=1)
    return canonical_hemisphere(wxyz).reshape(matrices.shape[:-2] + (4,))


def quats_to_rots(quats: np.ndarray) -> np.ndarray:
    quats = np.asarray(quats, dtype=np.float64)
    flat = quats.reshape(-1, 4)
    xyzw = np.concatenate([flat[:, 1:], flat[:, :1]], axis=1)
    return Rotation.from_quat(xyzw).as_matrix().reshape(quats.shape[:-1] + (3, 3))


def rot_to_quat(rotation: np.ndarray) -> np.ndarray:
    """Unit quaternion ``(w, x, y, z)`` with ``w >= 0`` for a proper rotation."""
    rotation = np.asarray(rotation, dtype=np.float64)
    if rotation.shape != (3, 3):
        raise NotARotation(f"expected a 3x3 matrix, got shape {rotation.shape}")
    return rots_to_quats(rotation[None])[0]


def quat_to_rot(quat: Sequence[float] | np.ndarray) -> np.ndarray:
    return quats_to_rots(np.asarray(quat, dtype=np.float64).reshape(1, 4))[0]


def inverse_distance_weights_batch(distances: np.ndarray) -> np.ndarray:
    """Row-wise inverse-distance weights; ``inf`` entries (missing neighbors) get 0.

    Rows containing a distance ``<= EPS_ZERO`` put all weight on the first such
    entry. Rows with no finite distance come back as all zeros.
    """
    d = np.asarray(distances, dtype=np.float64)
    hit = d <= EPS_ZERO
    any_hit = hit.any(axis=-1)

    with np.errstate(divide="ignore"):
        inv = np.where(np.isfinite(d) & ~hit, 1.0 / np.where(hit, 1.0, d), 0.0)
    total = inv.sum(axis=-1, keepdims=True)
    weights = np.divide(inv, total, out=np.zeros_like(inv), where=total > 0.0)

    if np.any(any_hit):
        first = np.argmax(hit, axis=-1)
        one_hot = np.zeros_like(weights)
        np.put_along_axis(one_hot, first[..., None], 1.0, axis=-1)
        weights = np.where(any_hit[..., None], one_hot, weights)
    return weights


def inverse_distance_weights(distances: Sequence[float] | np.ndarray) -> np.ndarray:
    d = np.asarray(distances, dtype=np.float64).reshape(-1)
    if d.size == 0:
        raise EmptyInput("need at least one distance")
    if np.any(d < 0.0) or not np.all(np.isfinite(d)):
        raise ValueError("distances must be finite and nonnegative")
    return inverse_distance_weights_batch(d[None])[0]


def nlerp_rotations_batch(quats: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Row-wise normalized weighted quaternion blend.

    Every input is first flipped into the hemisphere of its row's
    largest-weight quaternion. Rows whose blend vanishes fall back to that
    quaternion.
    """
    quats = np.asarray(quats, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    ref_idx = np.argmax(weights, axis=-1)
    ref = np.take_along_axis(quats, ref_idx[..., None, None], axis=-2)

    dots = np.sum(quats * ref, axis=-1)
    signs = np.where(dots < 0.0, -1.0, 1.0)
    blended = np.sum((weights * signs)[..., None] * quats, axis=-2)
    norms = np.linalg.norm(blended, axis=-1, keepdims=True)

    degenerate = norms[..., 0] < BLEND_TOL
    safe = np.where(degenerate[..., None], ref[..., 0, :], blended / np.where(norms < BLEND_TOL, 1.0, norms))
    return canonical_hemisphere(safe)


def nlerp_rotations(
    quats: Sequence[Sequence[float]] | np.ndarray, weights: Sequence[float] | np.ndarray
) -> np.ndarray:
    q = np.asarray(quats, dtype=np.float64).reshape(-1, 4)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if q.shape[0] == 0:
        raise EmptyInput("need at least one quaternion")
    if q.shape[0] != w.shape[0]:
        raise ValueError(f"{q.shape[0]} quaternions but {w.shape[0]} weights")

    ref = q[np.argmax(w)]
    signs = np.where(q @ ref < 0.0, -1.0, 1.0)
    blended = ((w * signs)[:, None] * q).sum(axis=0)
    norm = np.linalg.norm(blended)
    if norm < BLEND_TOL:
        raise DegenerateBlend(f"weighted quaternion sum has norm {norm:.3g}")
    return canonical_hemisphere(blended / norm)
