"""Exception hierarchy shared across the toolkit.

The CLI maps each class to a distinct process exit code, so keep the
hierarchy flat and the classes specific.
"""


class QsmError(Exception):
    """Base class for all toolkit errors."""


class DimensionMismatchError(QsmError):
    """Operands live on different grids."""


class InvalidRotationError(QsmError):
    """Matrix is not a proper rotation (orthonormal, det +1)."""


class EmptyMaskError(QsmError):
    """A brain mask with no true voxel was passed where one is required."""


class MaskTooSmallError(QsmError):
    """Mask cannot accommodate the requested spherical kernel."""


class PhantomSpecError(QsmError):
    """Phantom specification is invalid (outside FOV, duplicate labels, ...)."""


class ConfigError(QsmError):
    """Invalid algorithm or CLI configuration."""


class ConvergenceError(QsmError):
    """Iterative solver diverged; configuration is unusable."""


class VolumeFormatError(QsmError):
    """Volume file is malformed or uses an unsupported encoding."""
