from __future__ import annotations


class NoisyQuantError(Exception):
    """Base for every error raised by this package."""


class InvalidParameterError(NoisyQuantError, ValueError):
    pass


class DimensionMismatchError(InvalidParameterError):
    pass


class EmptySampleError(InvalidParameterError):
    pass


class InsufficientDataError(NoisyQuantError, ValueError):
    pass


class SolverError(NoisyQuantError, RuntimeError):
    pass


class ExperimentRejectedError(NoisyQuantError, RuntimeError):
    pass


class ConfigError(NoisyQuantError, ValueError):
    """Configuration problem, optionally pinned to a line of the config file."""

    def __init__(self, message: str, *, source: str | None = None, line: int | None = None):
        self.problem = message
        self.source = source
        self.line = line
        if source is not None and line is not None:
            message = f"{source}:{line}: {message}"
        elif source is not None:
            message = f"{source}: {message}"
        super().__init__(message)


class SampleFileError(ConfigError):
    pass


def check_dim(expected: int, got: int, what: str) -> None:
    if expected != got:
        raise DimensionMismatchError(
            f"{what} has dimension {got}, expected {expected}."
        )
