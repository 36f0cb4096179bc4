"""
Exception hierarchy for StimLab
Every error carries a category and the CLI exit code it maps to
"""


class StimLabError(Exception):
    """Base class for all StimLab failures"""

    category = "internal"
    exit_code = 1

    def __init__(self, message: str, **context):
        super().__init__(message)
        self.message = message
        self.context = context

    def to_dict(self) -> dict:
        return {"category": self.category, "message": self.message, **self.context}


class UsageError(StimLabError):
    """Invalid parameters, flags or configuration"""

    category = "usage"
    exit_code = 1


class DataError(StimLabError):
    """Unreadable, missing or inconsistent data"""

    category = "data"
    exit_code = 2


class NumericError(StimLabError):
    """A numerical procedure failed to reach its goal"""

    category = "numeric"
    exit_code = 3


class ParameterError(UsageError, ValueError):
    """A precondition on an operation's parameters was violated"""


class RecordFormatError(DataError):
    """A record file has a bad header, bad magic or truncated payload"""


class MissingFileError(DataError):
    """A file referenced by a manifest or command does not exist"""


class EmptySpikeSetError(DataError):
    """A spike-based measure was requested on a spike set with no spikes"""


class StatsInputError(DataError, ValueError):
    """Degenerate or incomplete input to a statistical test"""


class CalibrationError(NumericError):
    """Amplitude bisection could not reach the requested force"""

    def __init__(self, message: str, best_amplitude: float, best_force_fraction: float, **context):
        super().__init__(
            message,
            best_amplitude_ma=best_amplitude,
            best_force_fraction=best_force_fraction,
            **context,
        )
        self.best_amplitude = best_amplitude
        self.best_force_fraction = best_force_fraction
