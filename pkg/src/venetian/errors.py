"""Exception hierarchy shared by every module of the package."""


class VenetianError(Exception):
    """Base class for all errors raised by this package."""


class InvalidDirection(VenetianError):
    pass


class DimensionError(VenetianError):
    pass


class DegeneratePiece(VenetianError):
    pass


class ScheduleSearchExhausted(VenetianError):
    pass


class PlanInfeasible(VenetianError):
    def __init__(self, message, stage=None):
        super().__init__(message)
        self.stage = stage


class OrthogonalLines(VenetianError):
    pass


class StageStarved(VenetianError):
    pass


class EmptyStage(VenetianError):
    pass


class PieceCapExceeded(VenetianError):
    """A stage would hold more pieces than the configured cap."""

    def __init__(self, stage, count, cap):
        super().__init__(f"stage {stage} would hold {count} pieces (max_pieces={cap})")
        self.stage = stage
        self.count = count
        self.cap = cap


class InsufficientDepth(VenetianError):
    pass


class SlopeUndefined(VenetianError):
    pass


class LineNotInSchedule(VenetianError):
    pass


class CaseRangeError(VenetianError):
    pass


class InvalidExponent(VenetianError):
    pass


class InvalidInput(VenetianError):
    pass


class SampleNotInjective(VenetianError):
    pass


class ConfigError(VenetianError):
    pass


class ManifestIncomplete(VenetianError):
    pass


class ConfigMismatch(VenetianError):
    pass
