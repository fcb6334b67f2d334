class DldrError(Exception):
    exit_code = 1


class ConfigError(DldrError, ValueError):
    exit_code = 2


class DimensionError(DldrError, ValueError):
    exit_code = 2


class ShapeError(DldrError, ValueError):
    exit_code = 3


class LabelError(DldrError, ValueError):
    exit_code = 3


class FormatError(DldrError, ValueError):
    exit_code = 3


class IoError(DldrError, OSError):
    exit_code = 3


class DegenerateTrajectory(DldrError, ArithmeticError):
    exit_code = 4


class NumericalError(DldrError, ArithmeticError):
    exit_code = 4


class LineSearchFailed(NumericalError):
    def __init__(self, message, evals=0):
        super().__init__(message)
        self.evals = evals


class DivergenceError(NumericalError):
    pass


class SubspaceViolation(NumericalError):
    pass


class SkipUpdate(DldrError):
    """Curvature pair rejected; the caller keeps the current inverse Hessian."""
