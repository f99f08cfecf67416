"""Exception types shared across the package."""


class DSWError(Exception):
    """Base class for all package errors."""


class InvalidInputError(DSWError, ValueError):
    """Input violates a documented precondition (shape, simplex, finiteness)."""


class UnsupportedConfigurationError(InvalidInputError):
    """A valid but unsupported combination of options was requested."""


class NumericalFailureError(DSWError, ArithmeticError):
    """A numerical routine produced a non-finite or singular result.

    Attributes
    ----------
    quantity : str
        Name of the offending quantity.
    frame : int or None
        Frame index (0-based) when raised from inside a filter run.
    """

    def __init__(self, message, quantity=None, frame=None, residual=None):
        super().__init__(message)
        self.quantity = quantity
        self.frame = frame
        self.residual = residual

    def __str__(self):
        msg = super().__str__()
        if self.frame is not None:
            msg = f"frame {self.frame}: {msg}"
        return msg


class TrainingFailureError(NumericalFailureError):
    """Gradient descent diverged; a smaller learning rate usually helps."""
