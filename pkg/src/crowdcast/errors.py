"""Exception types shared across the package."""


class CrowdcastError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(CrowdcastError, ValueError):
    """An argument violates a documented precondition (bad shape, range, divisibility)."""


class RangeError(ParameterError):
    """A pedestrian position lies outside the scene bounds."""


class DegenerateMaskError(CrowdcastError):
    """A mask plan left no masked token (no training targets) or no visible token."""


class TrajectoryParseError(CrowdcastError):
    """A trajectory file line could not be parsed; message carries the line number."""


class DuplicateRecordError(CrowdcastError):
    """Two records share the same (frame_id, agent_id) key."""


class ProtocolError(CrowdcastError):
    """An evaluation protocol cannot be carried out (no windows, invalid combo)."""


class ConfigError(CrowdcastError):
    """The run configuration is malformed (unknown key, bad value, missing section)."""
