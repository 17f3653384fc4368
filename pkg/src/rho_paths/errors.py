"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: contract/domain problems exit 2,
resource problems exit 3 and numerical-convergence problems exit 4.
"""


class RhoPathsError(Exception):
    """Base class for every error raised by the package."""


class ContractError(RhoPathsError, ValueError):
    """A precondition of an operation was violated by the caller."""


class DomainError(ContractError):
    """An argument lies outside the mathematical domain of the operation."""


class ResourceError(RhoPathsError, MemoryError):
    """The requested computation does not fit the configured memory budget."""


class NumericalError(RhoPathsError, ArithmeticError):
    """An iterative method failed to converge or produced a degenerate value."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})
