"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class GKDiffError(Exception):
    """Base class for every error raised by the package."""


class InputError(GKDiffError, ValueError):
    """Malformed or non-finite input."""


class DimensionError(GKDiffError, ValueError):
    """Requested basis size exceeds what the marginal can support."""


class ConditioningError(GKDiffError, ArithmeticError):
    """Gram-Schmidt ran into a numerically degenerate marginal."""


class CompletenessError(GKDiffError, ValueError):
    """An exact Fourier expansion was requested with an incomplete basis."""


class CapacityError(GKDiffError, MemoryError):
    """A dense value table would exceed the enumeration cap."""


class PreconditionError(GKDiffError, ValueError):
    """An operation was called outside its documented domain."""


class NotGradientError(GKDiffError):
    """A function (or coefficient profile) is not in the gradient space.

    Attributes
    ----------
    witness : object
        Orbit representative (``MultiIndex``) with the largest orbit sum, or
        ``None`` when raised from a bare coefficient profile.
    orbit_sum : float
        The offending sum; a nonzero value certifies non-membership.
    seminorm_sq : float or None
        Full seminorm when it was computed.
    """

    def __init__(self, message, witness=None, orbit_sum=0.0, seminorm_sq=None):
        super().__init__(message)
        self.witness = witness
        self.orbit_sum = orbit_sum
        self.seminorm_sq = seminorm_sq


class ModelError(GKDiffError):
    """A generator failed one of its invariant self-checks."""

    def __init__(self, message, invariant=None):
        super().__init__(message)
        self.invariant = invariant


class DetailedBalanceError(ModelError):
    """An exchange kernel is not reversible with respect to its marginal."""


class DegenerateMarginalError(GKDiffError, ZeroDivisionError):
    """The compressibility vanishes, so diffusion coefficients are undefined."""


class VariationalError(GKDiffError):
    """The assembled quadratic form violates a structural requirement."""


class QuadratureError(GKDiffError, ArithmeticError):
    """Nested quadrature did not reach the requested tolerance."""

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class StatisticsError(GKDiffError):
    """Too few samples for the requested estimator."""
