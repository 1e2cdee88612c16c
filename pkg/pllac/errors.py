"""Exception types raised across the pllac package."""


class PLLACError(Exception):
    """Base class for every error raised by pllac."""


class ConfigError(PLLACError):
    pass


class DataError(PLLACError):
    pass


class ShapeError(PLLACError):
    pass


class NumericalError(PLLACError):
    """Non-finite values; `name` is the offending parameter, `epoch` the training epoch."""

    def __init__(self, message, name=None, epoch=None):
        super().__init__(message)
        self.name = name
        self.epoch = epoch


class ConvergenceError(PLLACError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual
