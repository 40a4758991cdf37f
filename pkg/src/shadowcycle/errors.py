"""Exception types shared across the package.

Every error raised on purpose by this package derives from
:class:`ShadowCycleError`, so callers can catch one base class.  The
command line maps subtrees of this hierarchy onto exit codes.
"""

from __future__ import annotations


class ShadowCycleError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(ShadowCycleError):
    """Bad command line arguments or an invalid configuration key."""


class InvalidInputError(ShadowCycleError, ValueError):
    """A tensor or value violates a documented precondition."""


class ConfigurationError(ShadowCycleError):
    """A configuration value is out of range or inconsistent."""


class DataError(ShadowCycleError):
    """A dataset is missing, malformed, or undecodable."""


class ContractViolationError(ShadowCycleError):
    """A composite value is missing a field required by the callee."""


class IncompatibilityError(ShadowCycleError):
    """A checkpoint was produced by a different architecture."""


class CorruptionError(ShadowCycleError):
    """A checkpoint or log file cannot be parsed."""


class UndefinedRegionError(ShadowCycleError):
    """A metric was requested over an empty pixel region."""


class NumericError(ShadowCycleError):
    """A non-finite value appeared where finite math was required."""


def exit_code_for(exc: BaseException) -> int:
    """Map an exception onto the command line exit code convention.

    Returns 1 for usage problems, 2 for data and configuration
    problems, and 3 for numeric failures.  Unknown exceptions also
    map to 3 so that crashes are distinguishable from bad input.
    """
    if isinstance(exc, UsageError):
        return 1
    if isinstance(
        exc,
        (
            InvalidInputError,
            ConfigurationError,
            DataError,
            ContractViolationError,
            IncompatibilityError,
            CorruptionError,
            UndefinedRegionError,
        ),
    ):
        return 2
    return 3
