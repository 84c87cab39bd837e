"""Exception types shared across the package.

Every error raised by the library derives from SeqshardError so callers
(CLI, service) can map failures to exit codes / HTTP statuses in one place.
"""


class SeqshardError(Exception):
    """Base class for all library errors."""


class ShapeError(SeqshardError):
    """Operands have incompatible or malformed dimensions."""


class NumericDegenerateError(SeqshardError):
    """A computation hit a degenerate numeric state (e.g. zero row sum)."""


class ConfigError(SeqshardError):
    """Invalid model, experiment, or strategy configuration."""


class InvalidPlanError(SeqshardError):
    """A partition plan cannot be built from the requested sizes."""


class InvalidLandmarkCountError(SeqshardError):
    """Requested landmark count is outside [1, partition size]."""


class ProtocolError(SeqshardError):
    """Messages violate the exchange protocol (missing/duplicate sources)."""


class DegenerateMaskError(SeqshardError):
    """A mask leaves some query row with no visible key."""


class StallError(SeqshardError):
    """The simulated run stopped making progress before completion."""
