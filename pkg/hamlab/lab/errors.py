class LabError(Exception):
    """Base class for every failure raised by the lab modules."""


class ParameterError(LabError, ValueError):
    """An argument outside the range an operation accepts."""


# modulus
class ModulusDomainError(LabError, ValueError):
    pass


class ModulusParseError(LabError, ValueError):
    pass


class UnboundedSupremumError(LabError):
    pass


# volterra
class NotDiniError(LabError):
    pass


class ResolventDivergenceError(LabError):
    pass


# linear_flow
class PathSpanError(LabError, ValueError):
    pass


class SingularMatrixError(LabError):
    pass


class FactorizationError(LabError):
    pass


# heat_probe
class ResolutionError(LabError):
    pass


class GridMismatchError(LabError, ValueError):
    pass


class DimensionError(LabError, ValueError):
    pass


# sde_lab
class ModelParameterError(LabError, ValueError):
    pass


class StepSizeError(LabError, ValueError):
    pass


# zvonkin
class HullError(LabError):
    pass


class TransformError(LabError):
    pass
