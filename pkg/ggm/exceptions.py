class GGMError(Exception):
    """Base class for every error raised by the ggm services."""


class ArgumentError(GGMError, ValueError):
    pass


class ModelConstructionError(GGMError, ValueError):
    pass


class SingularSystemError(GGMError, ArithmeticError):
    pass


class EmptySelectionError(GGMError):
    """Every λ of the grid was flagged, so no criterion minimiser exists."""


class ConfigError(GGMError, ValueError):
    pass


class SolverConvergenceError(GGMError):
    """Raised in strict mode when a nodewise fit hits max_iter.

    Carries the node index and the best iterate so callers can inspect it.
    """

    def __init__(self, message, node=None, theta=None, residual=None):
        super().__init__(message)
        self.node = node
        self.theta = theta
        self.residual = residual
