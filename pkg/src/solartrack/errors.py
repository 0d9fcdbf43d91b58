"""Exception hierarchy shared by every solartrack module."""


class SolarTrackError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(SolarTrackError, ValueError):
    """Input violates a documented precondition."""


class DegenerateError(ValidationError):
    """A box or pair of boxes has zero area where positive area is required."""


class EmptyRegionError(ValidationError):
    """A mask has no true cells."""


class NothingToEvaluateError(ValidationError):
    """No annotated frames were supplied to a metric."""


class ParseError(SolarTrackError, ValueError):
    """Malformed file or payload.

    ``line`` is the 1-based line number when the source is line oriented,
    ``field`` names the offending field when known.
    """

    def __init__(self, message, *, line=None, field=None):
        prefix = []
        if line is not None:
            prefix.append(f"line {line}")
        if field is not None:
            prefix.append(f"field {field!r}")
        full = f"{', '.join(prefix)}: {message}" if prefix else message
        super().__init__(full)
        self.line = line
        self.field = field


class TransportError(SolarTrackError):
    """Remote service unreachable after the configured retries."""


class DivergedError(SolarTrackError):
    """Training produced a non-finite gradient or parameter."""


class UndefinedCorrelationError(SolarTrackError, ValueError):
    """Normalized cross-correlation of a zero-variance signal."""
