"""Exception hierarchy for selfmetro.

The CLI maps these onto process exit codes, see ``exit_code_for``.
"""

from typing import Optional


class SelfMetroError(Exception):
    """Base class for every error raised by selfmetro."""

    exit_code: int = 1


class ConfigError(SelfMetroError, ValueError):
    """Invalid configuration, preconditions or inputs."""

    exit_code = 2


class GridMismatchError(ConfigError):
    """A sampled function does not live on the expected grid."""


class NumericalError(SelfMetroError, RuntimeError):
    """A numerical kernel failed or produced an unusable result."""

    exit_code = 3


class StepSizeError(NumericalError):
    """An integration step left defects above tolerance before correction."""

    def __init__(self, message: str, defect: Optional[float] = None):
        super().__init__(message)
        self.defect = defect


class GuardViolationError(NumericalError):
    """A guard rule with an ABORT action failed."""

    def __init__(self, message: str, rule_id: Optional[str] = None):
        super().__init__(message)
        self.rule_id = rule_id


class NoInformationError(SelfMetroError):
    """The likelihood carries no information about the parameter."""

    exit_code = 4


def exit_code_for(error: BaseException) -> int:
    """Return the CLI exit code for ``error``."""
    if isinstance(error, SelfMetroError):
        return error.exit_code
    return 1
