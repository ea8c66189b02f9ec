"""Exception types shared across the pipeline."""


class CandleDataError(ValueError):
    """Malformed, inconsistent, or out-of-order candle data."""


class GapError(CandleDataError):
    """A gap in the hourly series longer than the repair policy tolerates."""


class ResponseDomainError(ValueError):
    """Close prices incompatible with the configured response formula."""


class FeatureError(ValueError):
    """Invalid feature selection, or data too short/incomplete to compute it."""


class AlignmentError(ValueError):
    """Two timestamped series that must line up do not."""


class MissingClassError(ValueError):
    """A training window does not contain every class."""


class InsufficientHistoryError(ValueError):
    """The data range cannot support the requested schedule."""


class FetchError(RuntimeError):
    """Remote candle retrieval failed after retries."""


class ConfigError(ValueError):
    """Run configuration rejected at validation time."""
