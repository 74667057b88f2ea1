"""Exception hierarchy shared by all simulator modules."""


class VodSimError(Exception):
    """Base class for every error raised by vodsim."""


class InvalidParameterError(VodSimError, ValueError):
    pass


class EmptyCatalogError(InvalidParameterError):
    pass


class ConfigError(VodSimError, ValueError):
    """Bad configuration. ``key`` names the offending setting when known."""

    def __init__(self, message: str, key: str | None = None):
        self.key = key
        if key is not None:
            message = f"{key}: {message}"
        super().__init__(message)


class InvalidQueryError(VodSimError, ValueError):
    pass


class InvalidRequestError(VodSimError, ValueError):
    pass


class SimulationAbort(VodSimError, RuntimeError):
    """An invariant check failed while the event loop was running."""

    def __init__(self, message: str, event_index: int, time_s: float):
        self.event_index = event_index
        self.time_s = time_s
        super().__init__(f"event #{event_index} at t={time_s:.3f}s: {message}")
