"""Exception hierarchy shared by all modules.

Every error carries a stable ``error_class`` string (its class name) so the
command line runner can report failures in a machine-readable way.
"""


class QSDChaosError(Exception):
    @property
    def error_class(self):
        return type(self).__name__


class InvalidDimensionError(QSDChaosError, ValueError):
    """A mode dimension below 2 or operator shapes that do not agree."""


class TruncationTooSmallError(QSDChaosError, ValueError):
    def __init__(self, message, required_n_max=None):
        super().__init__(message)
        self.required_n_max = required_n_max


class DimensionCapError(QSDChaosError, ValueError):
    """Requested Hilbert space or density matrix exceeds the memory cap."""


class DivergenceError(QSDChaosError, ArithmeticError):
    """Classical integration produced a non-finite state."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class NumericalBlowupError(QSDChaosError, ArithmeticError):
    """Stochastic stepping produced non-finite amplitudes."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class StepSizeError(QSDChaosError, ArithmeticError):
    """Density matrix lost positivity; the step is too large."""


class ConfigError(QSDChaosError, ValueError):
    """Invalid run configuration."""
