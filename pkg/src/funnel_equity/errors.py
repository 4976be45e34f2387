"""Exception types shared across the package."""


class FunnelEquityError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(FunnelEquityError):
    """Invalid or inconsistent analysis configuration."""


class IngestError(FunnelEquityError):
    """Malformed input data; the message names the offending line when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UndefinedRatioError(FunnelEquityError):
    """A ratio could not be computed because a denominator is zero."""

    def __init__(self, message, layer=None):
        if layer is not None:
            message = f"{message} (layer: {layer})"
        super().__init__(message)
        self.layer = layer


class NoOverlapError(FunnelEquityError):
    """No stratum contains units from both groups; matching is impossible."""


class DegenerateRateError(FunnelEquityError):
    """A conversion rate of zero admits no log-scale variance."""


class DegenerateVarianceError(FunnelEquityError):
    """Zero variance with unequal ratios; the z statistic is undefined."""
