"""Exception types raised by the engine."""


class ForgeError(Exception):
    """Base class for all engine errors."""


class InvalidMeshError(ForgeError):
    """Mesh violates a structural invariant (isolated vertex, bad index...)."""


class DegenerateTriangleError(InvalidMeshError):
    """A triangle has (near-)zero area where a frame is required."""

    def __init__(self, triangle: int, message: str = ""):
        self.triangle = triangle
        super().__init__(message or f"degenerate triangle {triangle}")


class TopologyMismatchError(ForgeError):
    """Inputs do not share the required mesh topology."""


class FieldRangeError(ForgeError):
    """A per-vertex field is outside its allowed bounds."""


class UnsnappableEditError(ForgeError):
    """Redrawn segment endpoints are too far from the erased gap to snap."""


class MissingCurveError(ForgeError):
    """A named feature curve is absent from a sketch or mesh."""


class SolverError(ForgeError):
    """A linear solve failed or did not converge to tolerance."""


class ContractViolationError(ForgeError):
    """A plug-in (predictor / enhancer) broke its I/O contract."""


class InsufficientRegionError(ForgeError):
    """Too few pixels available for a statistical estimate."""


class StageError(ForgeError):
    """A pipeline stage failed; carries the stage name for the caller."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
