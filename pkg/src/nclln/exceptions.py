"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line layer can map
failures onto its documented exit statuses without inspecting messages.
"""


class NclError(Exception):
    exit_code = 4


class ValidationError(NclError, ValueError):
    exit_code = 2


class ParseError(ValidationError):
    def __init__(self, message, line=None, column=None):
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)
        self.line = line
        self.column = column


class DoeblinViolated(ValidationError):
    pass


class NotPrimitive(ValidationError):
    pass


class SizeCapExceeded(ValidationError):
    pass


class PathTooShort(ValidationError):
    pass


class SeedCollision(ValidationError):
    pass


class WindowTooShort(ValidationError):
    pass


class OffsetOutOfRange(ValidationError):
    pass


class BadResolution(ValidationError):
    pass


class DimensionNotScalar(ValidationError):
    pass


class InfeasibleBeta(ValidationError):
    pass


class BetaOutOfRange(ValidationError):
    pass


class NetExplosion(NclError):
    pass


class NonConvergence(NclError, ArithmeticError):
    pass


class UnknownOracle(ValidationError):
    pass


class OracleMismatch(NclError):
    exit_code = 3


class IoError(NclError, OSError):
    pass
