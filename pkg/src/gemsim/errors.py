"""Exception hierarchy shared by all gemsim modules."""


class GemsimError(Exception):
    """Base class; the CLI maps subclasses to exit codes."""

    exit_code = 3


class InvalidParameterError(GemsimError, ValueError):
    exit_code = 2


class ResolutionError(InvalidParameterError):
    """Frequency grid too coarse for the narrowest feature."""


class StepSizeError(InvalidParameterError):
    """Time step does not resolve the fastest phase evolution."""


class DivergenceError(GemsimError, FloatingPointError):
    pass


class ConfigurationError(InvalidParameterError):
    pass


class FitError(GemsimError):
    pass


class MalformedStreamError(GemsimError):
    pass


class IncompatibleHistogramError(GemsimError):
    pass


class UndefinedEfficiencyError(GemsimError, ZeroDivisionError):
    pass
