"""Exception types raised across the package."""


class KineticStorageError(Exception):
    """Base class for all package errors."""


class ValidationError(KineticStorageError, ValueError):
    """Invalid user input (bad config, malformed series, out-of-range parameter)."""


class NonConstantKappa(ValidationError):
    pass


class TooFewSamples(ValidationError):
    pass


class DegenerateDesign(KineticStorageError):
    pass


class EmptyInput(ValidationError):
    pass


class SizeMismatch(ValidationError):
    pass


class GridMismatch(ValidationError):
    pass


class NonCausal(ValidationError):
    pass


class DetachedNode(KineticStorageError):
    pass


class MissingCheckpoint(ValidationError):
    pass


class NonFiniteState(KineticStorageError, FloatingPointError):
    pass


class NonFiniteLoss(KineticStorageError, FloatingPointError):
    pass
