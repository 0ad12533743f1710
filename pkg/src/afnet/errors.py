"""Exception types raised across the package."""


class AfnError(Exception):
    """Base class for all package errors."""


class ShapeError(AfnError, ValueError):
    """Operand shapes are incompatible with the requested operation."""


class NonFiniteError(AfnError, FloatingPointError):
    """A tensor contains NaN or Inf."""


class DataError(AfnError):
    """Input data (audio, manifests, score files) is malformed or unusable."""


class FeatureFormatError(DataError):
    """A feature file has the wrong magic, version or size."""


class CheckpointFormatError(DataError):
    """A checkpoint has the wrong magic bytes or version."""


class CorruptCheckpointError(CheckpointFormatError):
    """A checkpoint is truncated or fails its integrity check."""


class ConvergenceError(AfnError, RuntimeError):
    """An iterative solver hit its iteration limit."""


class GradCheckError(AfnError, AssertionError):
    """Analytic and numerical gradients disagree."""
