"""Exception hierarchy shared by every module of the package."""


class ReclraError(Exception):
    """Base class for all errors raised by reclra."""


class ShapeError(ReclraError, ValueError):
    """Operand extents do not line up."""


class NonFiniteError(ReclraError, FloatingPointError):
    """A NaN or infinity appeared where finite values are required."""


class UnsupportedDerivativeError(ReclraError):
    """An activation without a usable derivative was asked for one."""


class WiringError(ReclraError, ValueError):
    """The error-synapse wiring is cyclic, incomplete or doubly targeted."""


class CheckpointError(ReclraError):
    """A checkpoint file is malformed, truncated or from another version."""


class DataFormatError(ReclraError):
    """A dataset file does not follow its binary format."""


class ConfigError(ReclraError, ValueError):
    """An experiment configuration value is missing or out of range."""


class TrainingDiverged(ReclraError):
    """The training loss became non-finite."""
