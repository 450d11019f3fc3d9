"""Sparse, box-constrained optimal control of semilinear parabolic equations.

The package discretizes the state equation by implicit Euler and central
differences, solves the control problem by proximal gradient, and checks
the first- and second-order optimality theory numerically: bang/sparse
structure, critical cones and their extensions, coercivity of the second
variation and quadratic growth.
"""

from .conditions import (
    ConeMembership,
    ConeQuery,
    PointLabel,
    ReferencePoint,
    bounds_report,
    classify,
    cone_membership,
    cone_survey,
    growth_report,
    multiplier_lambda,
    sample_critical_cone,
    satisfies_sign,
    ssc_report,
)
from .errors import (
    DegenerateInstanceError,
    EmptyConeWarning,
    GridMismatchError,
    InvalidInputError,
    NoRetainedSamplesError,
    NonconvergenceError,
    SaturationError,
    SingularStepError,
    UndefinedMultiplierError,
)
from .functional import dirderiv_J, dirderiv_j, eval_cost, hess_F_quadform, riesz_gradient_F
from .grid import Field, SpaceTimeGrid, inner_Omega, inner_Q, norm, read_field_csv, write_field_csv
from .optimize import OptimizeOptions, OptimizeTrace, prox_box_l1, proximal_gradient, stationarity_residual
from .pde import SolverOptions, solve_adjoint, solve_backward, solve_linearized, solve_state
from .problem import (
    CostIntegrands,
    Exponential,
    OddPolynomial,
    OperatorA,
    ProblemSpec,
    Zero,
    build_stationary_instance,
    cubic,
    validate,
)

__version__ = "0.1.0"
