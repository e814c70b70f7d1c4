"""Exception types raised across the pipeline."""


class WheelforgeError(Exception):
    """Base class for all package errors."""


class SingularSystem(WheelforgeError):
    """Constrained stiffness matrix is not positive definite."""


class DimensionMismatch(WheelforgeError, ValueError):
    pass


class InvalidLoadCase(WheelforgeError, ValueError):
    pass


class BisectionFailure(WheelforgeError):
    """No volume multiplier in the bracket meets the volume target."""


class EmptyGrid(WheelforgeError, ValueError):
    pass


class EmptyMask(WheelforgeError, ValueError):
    pass


class EmptyList(WheelforgeError, ValueError):
    pass


class NoSurface(WheelforgeError):
    pass


class DegenerateMesh(WheelforgeError):
    pass


class NotWatertight(WheelforgeError):
    pass


class Disconnected(WheelforgeError):
    pass


class EigenNonConvergence(WheelforgeError):
    pass


class InsufficientDesigns(WheelforgeError, ValueError):
    pass


class UndefinedIndex(WheelforgeError):
    """A clustering index is undefined for the given labelling."""


class NoOverlap(WheelforgeError, ValueError):
    pass


class NonPositiveGroundTruth(WheelforgeError, ValueError):
    pass


class EmptyVolume(WheelforgeError):
    pass


class EmptyMesh(WheelforgeError, ValueError):
    pass


class MissingPredecessor(WheelforgeError):
    pass


class ConfigInvalid(WheelforgeError, ValueError):
    pass


class EmptyManifest(WheelforgeError):
    pass


class RankDeficientWarning(UserWarning):
    pass


class DegenerateRangeWarning(UserWarning):
    pass
