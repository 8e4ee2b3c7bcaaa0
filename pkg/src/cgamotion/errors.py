"""Exception taxonomy for the motion engine.

Every error raised by the package derives from :class:`EngineError` and
carries a process exit code, so the CLI can translate any failure into a
stable, documented status (see docs/cli.md):

====  ========================================
code  meaning
====  ========================================
0     success
2     configuration / argument error
3     file I/O or parse error
4     domain error (bad sizes, ranges, inputs)
5     numeric/geometric failure
6     protocol error (wire messages, buffers)
====  ========================================
"""


class EngineError(Exception):
    """Base class for all engine errors."""

    exit_code = 1


class ConfigError(EngineError):
    """Bad CLI arguments, scenario keys, or configuration values."""

    exit_code = 2


class UnknownSuite(ConfigError):
    """`verify` was asked for a suite that does not exist."""


class IoError(EngineError):
    """A fixture or output file could not be read, parsed, or written."""

    exit_code = 3


# ---------------------------------------------------------------- domain (4)

class DomainError(EngineError):
    exit_code = 4


class KindMismatch(DomainError):
    """Interpolation endpoints classify as different versor kinds."""


class InvalidAxis(DomainError):
    """Rotation axis is not unit length."""


class InvalidScale(DomainError):
    """Dilation scale must be a positive finite real."""


class InvalidEpsilon(DomainError):
    """Keyframe reduction tolerance must be positive and finite."""


class InvalidDt(DomainError):
    """Simulation time step must be positive and finite."""


class ModelMismatch(DomainError):
    """Track / model / pose bone counts disagree."""


class BoneCountMismatch(DomainError):
    """Two poses that must align have different bone counts."""


class OutOfRange(DomainError):
    """Frame index or interpolation parameter outside its valid range."""


class IndexOutOfRange(DomainError):
    """Vertex, particle, or node index outside the container."""


# --------------------------------------------------------------- numeric (5)

class NumericError(EngineError):
    exit_code = 5


class NullWeightError(NumericError):
    """Conformal point has (near-)zero homogeneous weight — point at infinity."""


class NotAVersor(NumericError):
    """Multivector times its reverse is not a scalar within tolerance."""


class NotAMotor(NumericError):
    """Multivector is outside the 8-component motor subalgebra."""


class Unclassifiable(NumericError):
    """No versor-kind pattern matches within tolerance."""


class DegenerateBlend(NumericError):
    """Blend norm collapsed (antipodal endpoints or zero weight)."""


class DegeneratePlane(NumericError):
    """Cut plane normal is (near-)zero."""


class DegenerateCluster(NumericError):
    """Shape-match cluster has too few particles or zero spread."""


# -------------------------------------------------------------- protocol (6)

class ProtocolError(EngineError):
    exit_code = 6


class MalformedMessage(ProtocolError):
    """Wire bytes do not parse as a valid message."""


class BaseMissing(ProtocolError):
    """Delta message references a base snapshot the decoder does not hold."""


class EmptyBuffer(ProtocolError):
    """Jitter buffer has no snapshots to render from."""
