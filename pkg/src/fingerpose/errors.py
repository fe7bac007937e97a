"""Exception hierarchy shared by all fingerpose modules."""


class FingerPoseError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgumentError(FingerPoseError, ValueError):
    pass


class OutOfRangeError(InvalidArgumentError):
    pass


class DegenerateDistributionError(FingerPoseError, ArithmeticError):
    """Expected sine and cosine both vanish, so no angle can be decoded."""


class DegenerateConfigurationError(FingerPoseError, ArithmeticError):
    """Point configuration does not determine a rigid transform."""


class UnderdeterminedError(FingerPoseError, ArithmeticError):
    """Least-squares system has too few samples or is rank deficient."""


class RejectionError(FingerPoseError):
    """A requested synthetic sample falls outside the finger foreground."""


class NumericFaultError(FingerPoseError, FloatingPointError):
    """Non-finite values appeared during a forward or backward pass."""

    def __init__(self, message, layer=None, epoch=None, batch=None):
        super().__init__(message)
        self.layer = layer
        self.epoch = epoch
        self.batch = batch
