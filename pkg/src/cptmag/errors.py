"""Exception types raised across the package."""


class CptMagError(Exception):
    """Base class for all package errors."""


class InvalidConfigurationError(CptMagError, ValueError):
    pass


class InvalidCalibrationError(CptMagError, ValueError):
    pass


class RecenteringError(CptMagError, ValueError):
    pass


class DegeneratePosteriorError(CptMagError, ArithmeticError):
    """The prior-likelihood product vanished everywhere on the grid."""


class FitError(CptMagError, RuntimeError):
    def __init__(self, message, residual_rms=float("nan")):
        super().__init__(f"{message} (residual rms {residual_rms:.3g})")
        self.residual_rms = residual_rms
