class GsdeError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(GsdeError, ValueError):
    """Array dimensions do not line up."""


class NonFiniteError(GsdeError, FloatingPointError):
    """A gradient, loss or parameter became NaN or infinite."""

    def __init__(self, message, timestep=None):
        super().__init__(message)
        self.timestep = timestep


class EpisodeFinishedError(GsdeError, RuntimeError):
    """step() was called on an episode that already ended."""


class ConfigError(GsdeError, ValueError):
    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key


class CsvSchemaError(GsdeError, ValueError):
    """A CSV file does not match the documented header or holds malformed values."""


class CheckpointError(GsdeError, ValueError):
    pass
