"""Exception types raised across the toolkit."""


class AmcError(Exception):
    """Base class for all toolkit errors."""


class InvalidSpec(AmcError, ValueError):
    pass


class BitCountMismatch(AmcError, ValueError):
    pass


class NonIntegerDelay(AmcError, ValueError):
    pass


class LengthMismatch(AmcError, ValueError):
    pass


class ZeroNoise(AmcError, ValueError):
    pass


class NonDistinctAlphas(AmcError, ValueError):
    pass


class EncodingFailure(AmcError):
    pass


class MalformedRecord(AmcError, ValueError):
    """A manifest or log line could not be parsed.

    Attributes:
        line: 1-based line number of the offending record.
    """

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InsufficientSamples(AmcError, ValueError):
    pass


class ShapeError(AmcError, ValueError):
    pass


class DivergedLoss(AmcError, FloatingPointError):
    pass


class LabelOutOfRange(AmcError, ValueError):
    pass


class EmptyMatrix(AmcError, ValueError):
    pass


class InvalidScheme(AmcError, ValueError):
    pass


class ConfigError(AmcError, ValueError):
    pass
