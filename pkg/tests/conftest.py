"""Shared fixtures. Makes the package importable from the repository root."""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

REPO_ROOT = Path(__file__).resolve().parents[1]
if str(REPO_ROOT) not in sys.path:
    sys.path.insert(0, str(REPO_ROOT))

from pointmorph.radiance.neural_points import NeuralPointCloud  # noqa: E402
from pointmorph.radiance.sh import num_bases, rgb_to_dc  # noqa: E402


def pytest_configure(config: pytest.Config) -> None:
    config.addinivalue_line("markers", "slow: acceptance-scale runs (deselect with -m 'not slow')")


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random proper rotation via QR of a Gaussian matrix."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1.0
    return q


def make_cloud(
    positions: np.ndarray,
    rgb=(0.6, 0.3, 0.2),
    degree: int = 0,
    density: float = 20.0,
    r_agg: float = 0.5,
    k_agg: int = 4,
    groups=None,
) -> NeuralPointCloud:
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    n = len(positions)
    sh = np.zeros((n, 3, num_bases(degree)))
    sh[:, :, 0] = rgb_to_dc(np.asarray(rgb, dtype=np.float64))
    return NeuralPointCloud(
        positions=positions,
        sh_coeffs=sh,
        density=np.full(n, density),
        confidence=np.ones(n),
        groups=np.zeros(n, dtype=np.uint8) if groups is None else groups,
        r_agg=r_agg,
        k_agg=k_agg,
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
