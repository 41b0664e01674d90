"""Point-based radiance fields that follow a deforming point cloud.

A neural point cloud is fitted to posed images in canonical space, moved per
frame by a keypoint-supervised deformation network, and rendered with view
directions bent back into canonical space by locally estimated rotations.
"""

from .errors import ConfigError, DivergedFit, FormatError, IoError, PointMorphError
from .radiance.neural_points import NeuralPointCloud

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DivergedFit",
    "FormatError",
    "IoError",
    "NeuralPointCloud",
    "PointMorphError",
    "__version__",
]
