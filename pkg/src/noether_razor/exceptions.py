"""Exception hierarchy shared across the package."""


class NoetherError(Exception):
    """Base class for all package errors."""


class ShapeError(NoetherError, ValueError):
    pass


class DomainError(NoetherError, ValueError):
    pass


class PreconditionError(NoetherError, ValueError):
    pass


class NumericError(NoetherError, ArithmeticError):
    pass


class DivergenceError(NumericError):
    """A simulated or predicted state became non-finite."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class TrainingAborted(NumericError):
    """Training hit a non-finite parameter; carries the last good state."""

    def __init__(self, message, last_good=None, epoch=None):
        super().__init__(message)
        self.last_good = last_good
        self.epoch = epoch
