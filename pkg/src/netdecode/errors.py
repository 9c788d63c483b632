"""Exception hierarchy shared by every stage of the pipeline."""


class NetDecodeError(Exception):
    """Base class for all package errors."""


class InvalidParam(NetDecodeError, ValueError):
    pass


class DimensionMismatch(NetDecodeError, ValueError):
    pass


class ValidationError(NetDecodeError, ValueError):
    """A network violates one of its structural invariants."""


class ParseError(NetDecodeError, ValueError):
    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class SchemaMismatch(NetDecodeError, ValueError):
    pass


class NetworkHashMismatch(NetDecodeError, ValueError):
    pass


class DisconnectedGraph(NetDecodeError):
    pass


# -- LP oracle ---------------------------------------------------------------

class Infeasible(NetDecodeError):
    pass


class Unbounded(NetDecodeError):
    pass


class DegenerateBasis(NetDecodeError):
    pass


class TooLarge(NetDecodeError):
    pass


# -- dataset / training --------------------------------------------------------

class YieldTooLow(NetDecodeError):
    def __init__(self, message, draws=0, discarded=0):
        self.draws = draws
        self.discarded = discarded
        super().__init__(message)


class Diverged(NetDecodeError):
    pass


# -- decoding ------------------------------------------------------------------

class BudgetExhausted(NetDecodeError):
    pass


class NotConverged(NetDecodeError):
    def __init__(self, message, residual=float("nan"), solution=None):
        self.residual = residual
        self.solution = solution
        super().__init__(message)


class SingularSystem(NetDecodeError):
    pass


class DecodeFailure(NetDecodeError):
    """Raised by the full decode pipeline; wraps the stage error in ``cause``."""

    def __init__(self, message, cause=None):
        self.cause = cause
        super().__init__(message)


class EmptyStore(NetDecodeError):
    pass
