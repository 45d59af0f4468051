"""Exception hierarchy shared by every module."""


class ShortcutVSRError(Exception):
    """Base class for all package errors."""


class DomainError(ShortcutVSRError, ValueError):
    """An argument lies outside its admissible range."""


class DimensionError(ShortcutVSRError, ValueError):
    """Array shapes are inconsistent."""


ShapeError = DimensionError


class NumericError(ShortcutVSRError, FloatingPointError):
    """A computation produced non-finite values."""

    def __init__(self, message, step=None, kind=None):
        super().__init__(message)
        self.step = step
        self.kind = kind


class ScheduleError(ShortcutVSRError, RuntimeError):
    """A sampling path could not be completed."""


class PlanError(ShortcutVSRError, ValueError):
    """A tile or segment plan cannot be built for the requested geometry."""


class FusionError(ShortcutVSRError, ValueError):
    """Tile or segment values do not match their plan."""


class AssemblyError(ShortcutVSRError, ValueError):
    """A condition packet cannot be assembled from the given inputs."""
