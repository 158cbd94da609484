"""Exception types shared across the package."""


class DrsrError(Exception):
    """Base class for all package errors."""


class PreconditionError(DrsrError, ValueError):
    """An operation was called on inputs that violate its contract."""


class RankDeficientDataError(PreconditionError):
    """A local dataset does not span the ambient space."""


class TraceConditionError(PreconditionError):
    """A matrix argument fails a required trace condition."""


class SingularCoefficientError(DrsrError):
    """The coefficient matrix of a Lyapunov equation is not positive definite."""


class IterateNotPositiveDefiniteError(DrsrError):
    """A local dual solve produced a non positive definite iterate.

    This signals that the dual aggregate has grown past the bound the
    solver theory requires; the consensus layer reacts by shrinking the
    step size.
    """


class ConfigurationError(DrsrError, ValueError):
    """An invalid parameter, config entry, or unknown option."""


class ProtocolError(DrsrError):
    """A message-passing contract was violated (missing neighbor data,
    unreachable node, inconsistent bookkeeping)."""


class CsvParseError(DrsrError, ValueError):
    """A CSV file could not be parsed; carries the 1-based row number."""

    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


class EngineError(DrsrError):
    """A consensus run aborted; carries the failing node and superstep."""

    def __init__(self, message: str, node_id: int | None = None,
                 superstep: int | None = None):
        super().__init__(message)
        self.node_id = node_id
        self.superstep = superstep


class DegenerateSpectrumWarning(UserWarning):
    """The eigengap at a subspace cut is numerically zero."""
