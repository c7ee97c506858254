"""Exception types raised across the pipeline."""

from __future__ import annotations


class HexformError(Exception):
    """Base class for every error raised by this package."""


# grid construction
class NotFactorOfThree(HexformError, ValueError):
    pass


class DegenerateTriangle(HexformError, ValueError):
    pass


class InvalidGrid(HexformError, ValueError):
    pass


# physics
class EmptyAnchorSet(HexformError, ValueError):
    pass


class CoincidentEndpoints(HexformError, ArithmeticError):
    pass


class NonFiniteState(HexformError, ArithmeticError):
    pass


class NoConvergence(HexformError, RuntimeError):
    """Iteration cap reached; ``residual`` holds the last measured residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


# planarization / geometry
class DegenerateFace(HexformError, ValueError):
    pass


class LengthMismatch(HexformError, ValueError):
    pass


# fabrication
class OrientationConflict(HexformError, ValueError):
    pass


class OppositeNormals(HexformError, ValueError):
    pass


class SelfIntersectingWall(HexformError, ValueError):
    pass


class DegeneratePyramid(HexformError, ValueError):
    pass


# i/o and config
class MalformedMesh(HexformError, ValueError):
    pass


class ParseError(HexformError, ValueError):
    pass


class InvalidConfig(HexformError, ValueError):
    pass


class StageError(HexformError):
    """Wraps an error raised inside a pipeline stage."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
