"""Exception types shared across the package."""


class IcnnVoltError(Exception):
    """Base class for all package errors."""


class InvalidNetwork(IcnnVoltError):
    pass


class NonConvergence(IcnnVoltError):
    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class VoltageCollapse(IcnnVoltError):
    pass


class TooManyRejections(IcnnVoltError):
    pass


class ShapeMismatch(IcnnVoltError, ValueError):
    pass


class DivergedLoss(IcnnVoltError):
    pass


class EmptyDataset(IcnnVoltError, ValueError):
    pass


class BoundsInverted(IcnnVoltError, ValueError):
    pass


class NoConsensus(IcnnVoltError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class TooManyUnits(IcnnVoltError, ValueError):
    pass


class TooManyDimensions(IcnnVoltError, ValueError):
    pass


class DegeneratePartition(IcnnVoltError):
    pass


class RankDeficient(IcnnVoltError):
    pass


# The same failure surfaces under different names in different modules.
DimensionMismatch = ShapeMismatch
LengthMismatch = ShapeMismatch
