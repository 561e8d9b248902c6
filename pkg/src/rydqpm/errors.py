"""Exception types raised across the package."""


class InvalidInputError(ValueError):
    """An argument is outside the domain of the operation."""


class OutOfRegimeError(ValueError):
    """An approximation was requested outside its stated validity regime.

    Attributes
    ----------
    validity : float
        The computed validity expression that exceeded the threshold.
    """

    def __init__(self, message, validity):
        super().__init__(message)
        self.validity = validity


class NotApplicableError(ValueError):
    """The requested quantity is undefined for the given data."""


class NumericalError(RuntimeError):
    """A linear-algebra step failed."""


class LinearizationRangeWarning(UserWarning):
    """A field was converted outside the range where the linear Stark map holds."""
