"""Exception hierarchy.

Every failure mode that callers are expected to handle gets its own class so
that tests and the exploration driver can react to specific conditions
(step-size control, restart logic, diagnostics) without string matching.
"""


class GLContError(Exception):
    """Base class for all package errors."""


# -- meshing ---------------------------------------------------------------


class MeshingFailed(GLContError):
    pass


class DegenerateTriangle(GLContError):
    pass


class NotSymmetric(GLContError):
    pass


# -- model -----------------------------------------------------------------


class UnsupportedOrder(GLContError):
    pass


# -- linear algebra --------------------------------------------------------


class NoConvergence(GLContError):
    """Iterative solve hit maxit.  Carries the best iterate found."""

    def __init__(self, message, x=None, resnorm=None):
        super().__init__(message)
        self.x = x
        self.resnorm = resnorm


class InconsistentSystem(GLContError):
    pass


class SingularDiagonal(GLContError):
    pass


class Breakdown(GLContError):
    pass


class SingularBorder(GLContError):
    pass


# -- continuation ----------------------------------------------------------


class ZeroTangent(GLContError):
    pass


class NewtonDiverged(GLContError):
    pass


class MaxIterations(GLContError):
    pass


class StepSizeUnderflow(GLContError):
    pass


# -- bifurcation -----------------------------------------------------------


class Diverged(GLContError):
    pass


class CollapsedToGauge(GLContError):
    pass


class AmbiguousKernel(GLContError):
    pass


# -- tangent construction --------------------------------------------------


class AssumptionViolated(GLContError):
    def __init__(self, condition, residual):
        super().__init__("assumption failed: %s (residual %.3e)" % (condition, residual))
        self.condition = condition
        self.residual = residual


class NoRealRoots(GLContError):
    pass


class DegenerateQuadratic(GLContError):
    pass


class MaxDepth(GLContError):
    pass


class MissingTable(GLContError):
    pass


class NotDihedral(GLContError):
    pass


class DegenerateLeastSquares(GLContError):
    pass


# -- symmetry --------------------------------------------------------------


class DegenerateAlignment(GLContError):
    pass
