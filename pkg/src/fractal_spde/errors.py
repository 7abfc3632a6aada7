"""Exception hierarchy shared by every module of the package."""


class FractalSPDEError(Exception):
    """Base class for all errors raised by this package."""


# IFS / partition
class IFSError(FractalSPDEError, ValueError):
    """Invalid iterated function system."""


class OverlappingCells(IFSError):
    pass


class BadWeights(IFSError):
    pass


class BadRatio(IFSError):
    pass


class EndpointMismatch(IFSError):
    pass


class PartitionTooLarge(FractalSPDEError):
    pass


class NotInSet(FractalSPDEError, ValueError):
    pass


# spectral / kernel
class DegeneratePartition(FractalSPDEError, ValueError):
    pass


class ConvergenceFailure(FractalSPDEError):
    pass


class WindowTooSmall(FractalSPDEError, ValueError):
    pass


class TimeTooSmall(FractalSPDEError, ValueError):
    pass


class NonpositiveLambda(FractalSPDEError, ValueError):
    pass


# simulation
class NonFinite(FractalSPDEError, FloatingPointError):
    """Blow-up detected; carries the offending path, step and node."""

    def __init__(self, message, path=None, step=None, node=None):
        super().__init__(message)
        self.path = path
        self.step = step
        self.node = node


class NoContraction(FractalSPDEError):
    pass


# analysis
class InsufficientPaths(FractalSPDEError, ValueError):
    pass


class InsufficientLags(FractalSPDEError, ValueError):
    pass


class WrongRegime(FractalSPDEError, ValueError):
    pass


# configuration
class ParseError(FractalSPDEError, ValueError):
    pass


class SchemaError(FractalSPDEError, ValueError):
    """Configuration violates the schema.

    Attributes
    ----------
    field : str
        Dotted name of the offending field.
    reason : str
        Name of the violated constraint (for example ``"BadWeights"``).
    """

    def __init__(self, field, reason, detail=""):
        self.field = field
        self.reason = reason
        msg = f"{field}: {reason}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
