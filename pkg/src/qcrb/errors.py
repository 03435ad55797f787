"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`QcrbError`,
so callers (the CLI in particular) can map failures to exit codes.
"""


class QcrbError(Exception):
    """Base class for all package errors."""


class NumericalFailure(QcrbError):
    """An iterative kernel did not converge."""


class SingularMatrixError(QcrbError):
    """A matrix that must be inverted has an eigenvalue below the floor."""

    def __init__(self, message, eigenvalue=None):
        super().__init__(message)
        self.eigenvalue = eigenvalue


class CapacityError(QcrbError):
    """A tensor construction would exceed the configured dimension cap."""


class ShapeError(QcrbError, ValueError):
    """Operand dimensions do not match."""


class DomainError(QcrbError, ValueError):
    """A parameter lies outside the model domain."""


class SingularModelError(QcrbError):
    """A state derivative leaves the support of the state."""


class SingularOutcomeError(QcrbError):
    """A zero-probability outcome carries first-order information."""


class InvalidProjectorError(QcrbError, ValueError):
    """A projector violates the partial-trace bound preconditions."""


class TargetError(QcrbError, ValueError):
    """A target information matrix is not admissible."""


class BoundaryError(QcrbError, ValueError):
    """A construction needs an interior point but got a boundary one."""


class RankDeficientDesignError(QcrbError):
    """A measurement design cannot identify every parameter."""


class InsufficientDataError(QcrbError, ValueError):
    """A tally needed by an estimator is empty."""


class ConfigError(QcrbError, ValueError):
    """An experiment manifest or command-line override is invalid."""

    def __init__(self, message, field=None):
        if field:
            message = f"{field}: {message}"
        super().__init__(message)
        self.field = field


class NotHermitianError(QcrbError, ValueError):
    """A matrix that must be Hermitian (or symmetric) is not."""
