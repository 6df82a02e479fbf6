"""Exception hierarchy shared across the toolkit."""


class OccuflowError(Exception):
    """Base class for all toolkit errors."""


class SpecMismatch(OccuflowError):
    """Two grids that must share a GridSpec do not."""


class ShapeMismatch(OccuflowError):
    """Array arguments disagree in shape."""


class ConfigError(OccuflowError):
    """Invalid configuration (indivisible dims, bad window size, ...)."""


class InvalidSchedule(OccuflowError):
    """Weight schedule with nonpositive entries."""


class MalformedScenario(OccuflowError):
    """Scenario violates structural contracts (state count != 91, ...)."""


class ParseError(OccuflowError):
    """Scenario JSON failed validation; message carries the field path."""


class FreqError(ParseError):
    """Scenario freq_hz is not 10."""


class MissingPrediction(OccuflowError):
    """Prediction files missing for one or more scenario ids."""

    def __init__(self, ids):
        self.ids = sorted(ids)
        super().__init__(f"missing predictions for scenarios: {', '.join(self.ids)}")


class DivergenceError(OccuflowError):
    """Training loss became non-finite."""
