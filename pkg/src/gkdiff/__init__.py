"""Gradient condition and diffusion coefficients for lattice systems under product measures."""

from .errors import (
    CapacityError,
    CompletenessError,
    ConditioningError,
    DegenerateMarginalError,
    DetailedBalanceError,
    DimensionError,
    GKDiffError,
    InputError,
    ModelError,
    NotGradientError,
    PreconditionError,
    QuadratureError,
    StatisticsError,
    VariationalError,
)
from .measure_basis import Marginal, OrthonormalBasis, build_basis, expect, quad_expect
from .local_fn import (
    LocalFunction,
    MultiIndex,
    OrbitRep,
    Window,
    expectation,
    fourier,
    inner,
    orbit_decompose,
    shift,
)
from .gradient import (
    CoefficientProfile,
    GradientDecomposition,
    decompose,
    is_gradient,
    seminorm_brute,
    seminorm_sq,
    snake_path,
    telescope_1d,
    telescope_nd,
)
from .dynamics import BondGenerator, make_gep, make_ssep, make_zero_range, model_from_config
from .variational import VariationalResult, lemma2_check, minimize, semi_inner, static_D

__version__ = "0.1.0"
