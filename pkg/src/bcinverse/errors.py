"""Exception hierarchy shared by all modules."""


class BCInverseError(Exception):
    """Base class for package errors."""


class ConfigurationError(BCInverseError, ValueError):
    """Invalid grid, solver, or experiment configuration."""


class DomainError(BCInverseError, ValueError):
    """A point lies outside the computational domain."""


class ShapeError(BCInverseError, ValueError):
    """Fields defined on incompatible grids were combined."""


class InstabilityError(BCInverseError, RuntimeError):
    """The time stepper produced non-finite values."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"non-finite wave field at time step {step}")


class ReplayError(BCInverseError, LookupError):
    """No stored trace exists for the requested source."""


class CurvatureError(BCInverseError, ArithmeticError):
    """Conjugate gradients met a direction of non-positive curvature."""

    def __init__(self, rayleigh_quotient, iteration):
        self.rayleigh_quotient = rayleigh_quotient
        self.iteration = iteration
        super().__init__(
            f"non-positive curvature at CG iteration {iteration}: "
            f"Rayleigh quotient {rayleigh_quotient:.3e}"
        )


class PreconditionError(BCInverseError, ValueError):
    """An operation was called on an argument outside its domain."""


class OracleInconsistencyError(BCInverseError, RuntimeError):
    """A volume oracle answered membership queries non-monotonically."""
