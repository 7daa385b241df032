"""Exception types shared by all modules.

Each class carries the process exit code the CLI maps it to.
"""


class ShadowconvError(Exception):
    exit_code = 1


class ParameterError(ShadowconvError, ValueError):
    """Invalid model or experiment parameter."""

    exit_code = 2


class MomentConditionError(ParameterError):
    """E[F^(2/beta)] is not finite."""


class EmptyProcessError(ParameterError):
    """No station survives truncation."""


class DataError(ShadowconvError, ValueError):
    """Input data could not be used (bad file, too few usable points, failed fit)."""

    exit_code = 3


class AccuracyError(ShadowconvError, ArithmeticError):
    """A numerical procedure did not reach its tolerance."""

    exit_code = 4
