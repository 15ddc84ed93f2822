"""Exception hierarchy shared by all statfem modules."""


class StatFEMError(Exception):
    """Base class for every domain error raised by the package."""


class MeshError(StatFEMError):
    """Invalid mesh topology, geometry or boundary data."""


class SingularSystemError(StatFEMError):
    """The assembled system cannot be solved (missing constraints, singular tangent)."""


class ConvergenceError(StatFEMError):
    """Newton iteration hit its iteration cap.

    The last residual norm is kept on ``residual_norm``.
    """

    def __init__(self, message, residual_norm=float("nan"), iterations=0):
        super().__init__(message)
        self.residual_norm = residual_norm
        self.iterations = iterations


class SensorLocationError(StatFEMError):
    """A sensor lies outside every element of the mesh."""

    def __init__(self, index, coords):
        super().__init__(f"sensor {index} at {tuple(float(c) for c in coords)} lies outside the mesh")
        self.index = index
        self.coords = tuple(float(c) for c in coords)


class RankDeficientError(StatFEMError):
    """Regression design matrix does not have full column rank."""


class SampleSolveError(StatFEMError):
    """A forward solve failed inside prior propagation."""

    def __init__(self, index, xi, cause):
        super().__init__(f"forward solve failed for sample {index} (xi={xi!r}): {cause}")
        self.index = index
        self.xi = xi
        self.cause = cause


class CholeskyError(StatFEMError):
    """A covariance stayed indefinite after the maximum jitter."""

    def __init__(self, message, min_eigenvalue=float("nan")):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue
