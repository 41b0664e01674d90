"""Exception hierarchy shared by the library and the command line."""

from __future__ import annotations


class PointMorphError(Exception):
    """Base class for errors that map onto a CLI exit code."""

    exit_code = 1
    category = "error"


class ConfigError(PointMorphError):
    exit_code = 2
    category = "config"


class IoError(PointMorphError):
    exit_code = 3
    category = "io"


class FormatError(IoError):
    """A file exists but its contents cannot be parsed."""

    category = "format"


class DivergedFit(PointMorphError, ArithmeticError):
    exit_code = 4
    category = "divergence"


# Recoverable domain errors. They stay ValueErrors so callers can treat them
# like any other bad-input condition.


class DegenerateCluster(ValueError):
    """Cross-covariance of a neighborhood has rank < 2."""


class NotARotation(ValueError):
    pass


class EmptyInput(ValueError):
    pass


class DegenerateBlend(ValueError):
    """Weighted quaternion sum vanished (antipodal inputs with equal weight)."""


class EmptyPointSet(ValueError):
    pass


class KTooLarge(ValueError):
    pass


class EmptyGroup(ValueError):
    pass


class IndexMismatch(ValueError):
    pass


class UnsortedSamples(ValueError):
    pass


class BoxBehindCamera(ValueError):
    pass


class EmptyMask(ValueError):
    pass


class DimMismatch(ValueError):
    pass


class BadParams(ValueError):
    pass
