"""Exception types shared across the package."""


class ZsdaError(Exception):
    """Base class for all package errors."""


class DataLoadError(ZsdaError):
    """A dataset file is missing or unreadable."""


class DataFormatError(ZsdaError):
    """A dataset file exists but its contents are malformed."""


class ConfigError(ZsdaError):
    """An experiment/architecture configuration is invalid."""


class TrainingDivergedError(ZsdaError):
    """A training loss became non-finite."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
