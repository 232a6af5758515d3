"""Exception hierarchy shared by every module."""


class TradesLabError(Exception):
    """Base class for all errors raised by tradeslab."""


class DimensionError(TradesLabError, ValueError):
    pass


class NumericError(TradesLabError, ArithmeticError):
    """A computation produced a non-finite value."""

    def __init__(self, message, layer=None):
        super().__init__(message if layer is None else f"{message} (layer {layer})")
        self.layer = layer


class CalibrationError(TradesLabError, ValueError):
    """The surrogate loss is not classification-calibrated."""


class ResolutionError(TradesLabError, RuntimeError):
    """A grid search could not meet its tolerance; refine the grid."""


class UnsupportedError(TradesLabError, ValueError):
    pass


class DataError(TradesLabError, ValueError):
    pass


class FormatError(DataError):
    """Malformed binary input; ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"{message} at byte offset {offset}")
        self.offset = offset


class IntegrityError(DataError):
    pass


class UnsupportedVersionError(DataError):
    def __init__(self, found, supported):
        super().__init__(
            f"checkpoint format version {found} is not supported (this build reads version {supported})"
        )
        self.found = found
        self.supported = supported
