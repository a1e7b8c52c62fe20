"""Exception types raised by bohmflow."""


class BohmflowError(Exception):
    pass


class InvalidParameterError(BohmflowError, ValueError):
    pass


class OutOfDomainError(BohmflowError, ValueError):
    """Evaluation requested before a packet's birth time."""


class NodeDegeneracyError(BohmflowError, ArithmeticError):
    """Density (or amplitude) below the node threshold at some point.

    ``mask`` flags the offending entries when the call was vectorized.
    """

    def __init__(self, msg, mask=None):
        super().__init__(msg)
        self.mask = mask


class UnsupportedLayoutError(BohmflowError, ValueError):
    pass


class SamplerFailureError(BohmflowError, RuntimeError):
    def __init__(self, msg, diagnostics=None):
        super().__init__(msg)
        self.diagnostics = diagnostics or {}


class RefinementError(BohmflowError, RuntimeError):
    """Quadrature grid too coarse for the requested accuracy."""


class InsufficientStatisticsError(BohmflowError, ValueError):
    pass


class ConfigError(BohmflowError, ValueError):
    pass
