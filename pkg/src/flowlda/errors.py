"""Shared exception and warning types."""


class FlowLdaError(Exception):
    """Base class for all package errors."""


class DimensionError(FlowLdaError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(FlowLdaError, ValueError):
    """A documented precondition was violated by the caller."""


class SingularMatrixError(FlowLdaError, ArithmeticError):
    """A matrix required to be nonsingular has a zero (or effectively zero) determinant."""


class DecompositionError(FlowLdaError, ArithmeticError):
    """A matrix factorization failed (e.g. Cholesky on a non-SPD input)."""


class NumericError(FlowLdaError, ArithmeticError):
    """A non-finite value appeared during computation.

    ``context`` carries locating information such as a flow block index or a
    training epoch/batch pair.
    """

    def __init__(self, message, **context):
        super().__init__(message)
        self.context = dict(context)


class ConvergenceWarning(UserWarning):
    """An iterative fit hit its iteration cap before reaching tolerance."""

    def __init__(self, message, gradient_norm=None):
        super().__init__(message)
        self.gradient_norm = gradient_norm
