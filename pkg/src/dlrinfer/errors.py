"""Exception types raised across the package."""


class DLRError(Exception):
    """Base class for all errors raised by dlrinfer."""


class InvalidModelError(DLRError, ValueError):
    """A topology, potential table or parameter set violates its invariants."""


class InvalidDimensionError(InvalidModelError):
    pass


class InvalidParameterError(InvalidModelError):
    pass


class InvalidRegionError(DLRError, ValueError):
    pass


class InvalidConfigError(DLRError, ValueError):
    """A configuration assigns an out-of-range state or has the wrong length."""


class ModelFormatError(InvalidModelError):
    """A model file is malformed; the message names the offending location."""


class DegenerateConditionalError(DLRError, ArithmeticError):
    """All entries of an unnormalized conditional table are zero."""


class LogOfZeroError(DLRError, ArithmeticError):
    """Mean-field update hit log(0) with nonzero weight."""


class ModelTooLargeError(DLRError, ValueError):
    pass


class UnsupportedModelError(DLRError, ValueError):
    pass


class PreconditionError(DLRError, ValueError):
    pass


class StepError(DLRError, RuntimeError):
    """An update step failed inside the fixed-point driver."""

    def __init__(self, message, iteration=None):
        super().__init__(message if iteration is None else f"iteration {iteration}: {message}")
        self.iteration = iteration


class OscillationError(DLRError, RuntimeError):
    """Fixed-point iteration did not settle; ``band`` holds the last (min, max)."""

    def __init__(self, message, band=None):
        super().__init__(message)
        self.band = band


class BadBracketError(DLRError, ValueError):
    pass


class EmptySummaryError(DLRError, ValueError):
    pass
