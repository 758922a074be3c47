"""Exception hierarchy.

Every failure the library raises derives from :class:`PoriferousError`, so
callers that only want to know "did the stage fail" can catch one type.
"""


class PoriferousError(Exception):
    """Base class for all library errors."""


class DegenerateTransform(PoriferousError):
    pass


class DegenerateFit(PoriferousError):
    pass


class OutOfDomain(PoriferousError):
    pass


class InvalidMesh(PoriferousError):
    pass


class InadmissiblePartition(PoriferousError):
    pass


class MapFoldover(PoriferousError):
    pass


class SolverFailure(PoriferousError):
    pass


class WeldMisfit(PoriferousError):
    pass


class ChainMisclosure(PoriferousError):
    pass


class ModulusDivergence(PoriferousError):
    pass


class WeldUnderdetermined(PoriferousError):
    pass


class ProjectionSingularity(PoriferousError):
    pass


class DegenerateFace(PoriferousError):
    pass


class InsideObstacle(PoriferousError):
    pass


class SafetyViolation(PoriferousError):
    pass


class NoPath(PoriferousError):
    pass


class StepRejected(PoriferousError):
    pass


class TopologyViolation(PoriferousError):
    pass


class GradientUnavailable(PoriferousError):
    pass


class StuckAgent(PoriferousError):
    pass


class MissionAbort(PoriferousError):
    pass


class NoConsensus(PoriferousError):
    pass


class StageError(PoriferousError):
    """Wraps a failure from one mapping/simulation stage with its location."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
