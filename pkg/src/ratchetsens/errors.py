from __future__ import annotations


class RatchetError(Exception):
    """Base class for all library errors."""


class ConfigError(RatchetError, ValueError):
    """Invalid user input: parameters, programs, or run configuration."""


class DegenerateDirectionError(RatchetError):
    """Flow direction requested for a zero deviator."""


class InadmissibleStateError(RatchetError):
    """A backstress lies outside its micro-yield surface."""


class IntegrationError(RatchetError):
    """The stress-controlled integrator could not advance.

    ``params`` carries the offending material parameters (or parameter
    vector) when the failure happened inside an optimization loop.
    """

    def __init__(self, message: str, *, step: int | None = None, time: float | None = None, params=None):
        super().__init__(message)
        self.step = step
        self.time = time
        self.params = params


class RankDeficiencyError(RatchetError):
    """The Jacobian lost column rank; ``column`` indexes the offending parameter."""

    def __init__(self, message: str, *, column: int, name: str | None = None, diag_ratio: float | None = None):
        super().__init__(message)
        self.column = column
        self.name = name
        self.diag_ratio = diag_ratio
