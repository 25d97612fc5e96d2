"""Exception hierarchy shared across the package."""


class MidcError(Exception):
    """Base class for all package errors."""


class NetworkError(MidcError):
    pass


class DisconnectedGraph(NetworkError):
    pass


class RolePartitionViolation(NetworkError):
    pass


class DuplicateLccAttachment(NetworkError):
    pass


class MissingParameter(NetworkError):
    pass


class ParseError(MidcError):
    """Scenario text could not be parsed.

    ``line`` and ``field`` point at the offending location when known.
    """

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


class UnknownBusReference(ParseError):
    pass


class ZeroDcVoltage(MidcError):
    pass


class SolverError(MidcError):
    pass


class NewtonDivergence(SolverError):
    pass


class InfeasibleFlow(SolverError):
    pass


class SingularJacobian(SolverError):
    pass


class NoSecureSolution(SolverError):
    pass


class SimulationError(MidcError):
    """Raised when a run aborts; ``trajectory`` holds the samples recorded so far."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


class Infeasible(MidcError):
    pass


class NoConvergence(MidcError):
    pass


class ZeroTotalDroop(MidcError):
    pass
