"""Exception taxonomy shared by all modules."""


class PseudoPdeError(Exception):
    """Base class for all package errors."""


class ConfigurationError(PseudoPdeError):
    """Invalid or inconsistent configuration (bad grid, clock coverage, ...)."""


class InputError(PseudoPdeError):
    """Invalid runtime input (non-finite point, grid mismatch, ...)."""


class NumericalError(PseudoPdeError):
    """Numerical failure (NaN field, rank-deficient regression, ...)."""


class InternalError(PseudoPdeError):
    """Violation of an internal invariant (non-monotone h transform, ...)."""


class ResourceError(PseudoPdeError):
    """Resource budget exceeded (cache memory cap, ...)."""


class UnsupportedFeatureError(PseudoPdeError):
    """Requested feature outside the supported subset (infinite-activity kernels, ...)."""


class ExpressionSyntaxError(PseudoPdeError):
    """Parse failure; carries the byte offset of the offending token."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class ExpressionDomainError(PseudoPdeError):
    """Evaluation hit a domain error (log/sqrt of a negative, division by zero).

    Carries the offending AST node.
    """

    def __init__(self, message, node):
        super().__init__(message)
        self.node = node
