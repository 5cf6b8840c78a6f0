"""Exception hierarchy shared by every stereokin module."""

from typing import Any, Dict, Optional


class StereoKinError(Exception):
    """Base class for all library errors."""


class DomainError(StereoKinError, ValueError):
    """An argument lies outside the domain of the operation."""


class TruncationError(StereoKinError):
    """A finite index window would drop a significant part of a distribution."""


class BoundsError(StereoKinError, IndexError):
    """A requested window does not fit inside the data it refers to."""


class InsufficientDataError(StereoKinError, ValueError):
    """Too few samples to constrain the requested fit."""


class IntegrationError(StereoKinError):
    """The ODE or radial solver failed; ``diagnostics`` holds solver state."""

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class RankDeficiencyError(StereoKinError):
    """The normal matrix of a least-squares problem is singular."""

    def __init__(self, message: str, condition_number: float = float("inf")):
        super().__init__(message)
        self.condition_number = condition_number


class ConfigError(StereoKinError):
    """A configuration or input file could not be parsed or validated."""

    def __init__(self, message: str, path: Optional[str] = None,
                 field: Optional[str] = None, line: Optional[int] = None):
        super().__init__(message)
        self.path = path
        self.field = field
        self.line = line

    def __str__(self) -> str:
        where = []
        if self.path:
            where.append(str(self.path))
        if self.line is not None:
            where.append(f"line {self.line}")
        if self.field:
            where.append(f"field '{self.field}'")
        prefix = ", ".join(where)
        return f"{prefix}: {self.args[0]}" if prefix else str(self.args[0])
