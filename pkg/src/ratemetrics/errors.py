"""Exception hierarchy. The CLI maps these onto exit codes."""


class RateError(ValueError):
    """Base class for all errors raised by ratemetrics."""

    exit_code = 1


class SchemaError(RateError):
    """Malformed input: bad column, bad flag combination, size mismatch."""

    exit_code = 2


class PositivityError(RateError):
    """Overlap or censoring-survival positivity is violated."""

    exit_code = 3
