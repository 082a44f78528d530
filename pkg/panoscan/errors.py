from __future__ import annotations


class PanoscanError(Exception):
    """Base for errors the command line turns into an exit code."""
    exit_code = 1


class ConfigError(PanoscanError):
    exit_code = 2


class DataError(PanoscanError):
    exit_code = 3


class CheckpointIncompatibleError(DataError):
    pass


class NumericalAbortError(PanoscanError):
    """Raised when training produces a non-finite quantity."""
    exit_code = 4


class ContractViolationError(AssertionError):
    pass


class ArgumentError(ValueError):
    pass


class DomainError(ArgumentError):
    pass


class DegenerateDistributionError(ValueError):
    pass


class UndefinedCorrelationError(ValueError):
    pass
