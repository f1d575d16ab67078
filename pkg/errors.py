class ErtError(Exception):
    """Base class for all errors raised by the inversion toolkit"""


class ParameterError(ErtError, ValueError):
    """Invalid argument or configuration value"""


class DegenerateConfigurationError(ParameterError):
    """Electrode configuration whose geometric factor is undefined"""


class MeshError(ErtError):
    """Mesh violates a structural invariant"""


class AssemblyError(ErtError):
    """Finite element assembly met a degenerate cell or operator"""


class FactorizationError(ErtError):
    """Sparse direct factorization hit a numerically singular pivot"""


class NotSPDError(ErtError):
    """Matrix expected to be symmetric positive definite is not"""


class BreakdownError(ErtError):
    """Krylov recurrence cannot continue"""


class SolverError(ErtError):
    """Solve produced a non-finite or otherwise unusable result"""


class DofCapExceeded(ErtError):
    """Problem too large for a dense computation"""
