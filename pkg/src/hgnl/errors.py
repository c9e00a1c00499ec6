"""Exception hierarchy shared across the package."""


class HgnlError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(HgnlError):
    """Tensor shapes are inconsistent with the operation's contract."""


class ConfigError(HgnlError):
    """A hyperparameter combination violates a validity constraint."""


class SamplingError(HgnlError):
    """A frame-sampling request cannot be satisfied."""


class TrainingError(HgnlError):
    """Training failed at runtime (for example, the loss became non-finite)."""


class StateError(HgnlError):
    """A backward pass was invoked with missing or mismatched saved state."""


class ContainerError(HgnlError):
    """An on-disk container file is missing fields or is structurally corrupt."""
