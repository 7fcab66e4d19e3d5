"""Exception hierarchy shared by every energywatch module."""


class EnergyWatchError(Exception):
    """Base class for all package errors."""


class MalformedRecordError(EnergyWatchError, ValueError):
    """A replay, sensor or store line could not be parsed or violates ordering."""

    def __init__(self, message, lineno=None, source=None):
        self.lineno = lineno
        self.source = source
        where = ""
        if source is not None:
            where += f"{source}"
        if lineno is not None:
            where += f":{lineno}" if where else f"line {lineno}"
        super().__init__(f"{where}: {message}" if where else message)


class UnsupportedSourceError(EnergyWatchError):
    pass


class InvalidBaselineError(EnergyWatchError, ValueError):
    """Normalization extrema are unusable (max <= min)."""


class InsufficientDataError(EnergyWatchError, ValueError):
    pass


class ConfigurationError(EnergyWatchError, ValueError):
    pass
