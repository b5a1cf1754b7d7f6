"""Exception hierarchy.

Two families matter to callers: :class:`InputValidationError` (bad files,
bad configuration, bad arguments; CLI exit code 2) and
:class:`NumericalError` (the maths broke down; CLI exit code 1).
"""

from __future__ import annotations


class EventVelError(Exception):
    """Base class for all package errors."""


class InputValidationError(EventVelError):
    """Rejected input. Carries an optional file/line/column location."""

    def __init__(self, message: str, *, path=None, line: int | None = None, column: str | None = None, index: int | None = None):
        self.path = None if path is None else str(path)
        self.index = index
        self.line = line
        self.column = column
        loc = []
        if self.path is not None:
            loc.append(self.path)
        if line is not None:
            loc.append(f"line {line}")
        if column is not None:
            loc.append(f"column {column!r}")
        self.message = message
        super().__init__(f"{': '.join([', '.join(loc), message]) if loc else message}")


class MissingFileError(InputValidationError):
    pass


class MalformedRowError(InputValidationError):
    pass


class OutOfBoundsEventError(InputValidationError):
    """Event outside the sensor, bad polarity or negative time; ``index`` names it."""


class NonMonotonicError(InputValidationError):
    pass


class TimestampUnitError(InputValidationError):
    """Event timestamps inconsistent with the microsecond convention."""


class ConfigurationError(InputValidationError):
    pass


class MissingInputError(InputValidationError):
    pass


class CoverageError(InputValidationError):
    def __init__(self, message: str, *, uncovered=(), **kwargs):
        self.uncovered = list(uncovered)
        super().__init__(message, **kwargs)


class AlignmentError(InputValidationError):
    """Series that should be sample-aligned are not."""


class NumericalError(EventVelError):
    pass


class SingularProjectionError(NumericalError):
    """Projective denominator vanished at the query point."""


class SingularityError(NumericalError):
    pass


class ReflectionError(NumericalError):
    """Warp Jacobian has non-positive determinant."""


class DegenerateInputError(NumericalError):
    pass


class EccDivergenceError(NumericalError):
    def __init__(self, message: str, iteration: int):
        self.iteration = iteration
        super().__init__(f"{message} (iteration {iteration})")


class InsufficientDataError(InputValidationError):
    pass


class DegenerateAxisError(NumericalError):
    pass


class UndefinedCorrelationError(NumericalError):
    pass
