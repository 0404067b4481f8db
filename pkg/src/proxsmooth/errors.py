"""Error types shared across the library.

Every failure mode raised by the library is a subclass of ProxSmoothError so
callers (and the CLI) can distinguish library conditions from programming
errors.
"""


class ProxSmoothError(Exception):
    pass


class NonFinite(ProxSmoothError):
    """An input or computed quantity is NaN or infinite."""


class TailEscape(ProxSmoothError):
    """A query point lies too far outside a quadrature prior's grid."""


class SigmaZero(ProxSmoothError):
    """The requested quantity is undefined at zero noise level."""


class GridTooCoarse(ProxSmoothError):
    """A tabulated grid is too coarse for the requested certification."""


class Divergence(ProxSmoothError):
    """An iteration produced an iterate past the divergence guard."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class MaxIterations(ProxSmoothError):
    """An iterative solver hit its iteration cap before converging."""


class NotLogConcave(ProxSmoothError):
    """A prior violated the log-concavity contract."""


class ManifoldEscape(ProxSmoothError):
    """An ODE step drifted too far off the critical manifold."""


class BoundViolated(ProxSmoothError):
    """A proven bound failed numerically (a test failure, not recoverable)."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class InsufficientData(ProxSmoothError):
    """Too few usable points for the requested statistic."""


class FixedPointNotFound(ProxSmoothError):
    """The reference fixed-point iteration failed to converge."""


class ConfigInvalid(ProxSmoothError):
    """A configuration file or override failed validation."""

    def __init__(self, message, problems=None):
        super().__init__(message)
        self.problems = list(problems) if problems else []


class IoFailure(ProxSmoothError):
    """Reading or writing an artifact failed."""


class AssertionFailed(ProxSmoothError):
    """An experiment's embedded bound check failed."""

    def __init__(self, message, checks=None):
        super().__init__(message)
        self.checks = list(checks) if checks else []
