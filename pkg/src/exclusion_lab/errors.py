"""Exception hierarchy shared by every module of the lab."""


class ExclusionLabError(Exception):
    """Base class for all errors raised by exclusion_lab."""


class InvalidLawError(ExclusionLabError, ValueError):
    pass


class EmptyLawError(InvalidLawError):
    pass


class NegativeWeightError(InvalidLawError):
    pass


class ZeroOffsetWeightError(InvalidLawError):
    pass


class NotNormalizedError(InvalidLawError):
    pass


class DegenerateDensityError(ExclusionLabError, ValueError):
    pass


class RingTooSmallError(ExclusionLabError, ValueError):
    """Ring shorter than the light cone of the requested horizon."""


class TooLargeError(ExclusionLabError, ValueError):
    pass


class WrapDominatedError(ExclusionLabError):
    """The two-point function has non-negligible mass near the antipode of the ring."""


class NotMeanZeroError(ExclusionLabError, ValueError):
    pass


class SolveFailedError(ExclusionLabError, RuntimeError):
    pass


class QuadratureFailureError(ExclusionLabError, RuntimeError):
    pass


class GridMissError(ExclusionLabError, KeyError):
    pass


class MissingAccumulatorError(ExclusionLabError):
    pass


class NotTASEPError(ExclusionLabError, ValueError):
    pass


class WindowTooWideError(ExclusionLabError, ValueError):
    pass


class InsufficientPointsError(ExclusionLabError, ValueError):
    pass


class NonPositiveValuesError(ExclusionLabError, ValueError):
    pass


class TailDominatedError(ExclusionLabError):
    pass


class LambdaOutOfRangeError(ExclusionLabError, ValueError):
    pass


class NegativeNormError(ExclusionLabError):
    pass


class InsufficientOverlapError(ExclusionLabError, ValueError):
    pass


class ConfigInvalidError(ExclusionLabError, ValueError):
    pass


class MissingInputError(ExclusionLabError, FileNotFoundError):
    pass


class DiskFullError(ExclusionLabError, OSError):
    pass
