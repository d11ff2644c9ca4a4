"""
Exception types shared by the threshold-surprise modules, and the
mapping from exception to CLI exit code.
"""


EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_DOMAIN = 4
EXIT_NUMERICAL = 5
EXIT_EMPTY = 6
EXIT_IO = 7


class SurpriseError(Exception):
    """Base class for every error raised by this project."""


class ParameterDomainError(SurpriseError, ValueError):
    """Model parameters outside their valid domain (e.g. sigma <= 0)."""


class UsageError(SurpriseError, ValueError):
    """A call that breaks an operation's preconditions."""


class DesignError(SurpriseError, ValueError):
    """A simulation design that cannot be sampled."""


class DegenerateMarginError(SurpriseError, ValueError):
    """A constant column where a rank transform needs variation."""

    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class DataParseError(SurpriseError, ValueError):
    """Malformed input file. Carries the 1-based line number when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UnsupportedStatisticError(SurpriseError, ValueError):
    """A statistic/estimator combination that has no known construction."""


class NumericalError(SurpriseError, RuntimeError):
    """Root finding, quadrature or tabulation failed to reach tolerance."""


class InitializationError(SurpriseError, RuntimeError):
    """An MCMC chain started where the log-target is -inf."""


class FitFailureError(SurpriseError, RuntimeError):
    """Maximum-likelihood fitting failed after all restarts."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class BootstrapError(SurpriseError, RuntimeError):
    """Too many bootstrap refits failed."""


class EmptySweepError(SurpriseError, RuntimeError):
    """Every candidate threshold in a sweep was skipped."""


def exit_code_for(exc):
    """Exit code the CLI returns for an exception."""
    if isinstance(exc, DataParseError):
        return EXIT_PARSE
    if isinstance(exc, (EmptySweepError,)):
        return EXIT_EMPTY
    if isinstance(exc, (NumericalError, FitFailureError, InitializationError, BootstrapError)):
        return EXIT_NUMERICAL
    if isinstance(exc, (ValueError,)):
        return EXIT_DOMAIN
    if isinstance(exc, OSError):
        return EXIT_IO
    return 1
