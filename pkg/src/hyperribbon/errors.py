class HyperRibbonError(Exception):
    """Base class for library errors."""


class ConfigError(HyperRibbonError, ValueError):
    """Invalid dataset, training or grid configuration (CLI exit code 2)."""


class NumericalError(HyperRibbonError, ArithmeticError):
    """A numerical precondition failed at run time (CLI exit code 3)."""


class InsufficientSpectrum(NumericalError):
    def __init__(self, message="insufficient spectrum"):
        super().__init__(message)
