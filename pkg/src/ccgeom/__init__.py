"""Numerical tools for Carnot-Caratheodory geometry of Hormander vector fields."""

__version__ = "0.1.0"

from .polynomial import Polynomial
from .expression import Expression, ExpressionDomainError, parse
from .vecfield import (
    BUILTINS,
    CommutatorBasis,
    HormanderError,
    VectorField,
    VectorFieldSystem,
    box_norm,
    builtin_basis,
    builtin_system,
    capital_lambda,
    commutator,
    divergence,
    hormander_step,
    lambda_I,
    nested_commutator,
    select_multiindex,
    spanning_basis,
)
from .flow import FlowBlowUp, FlowProgram, Step, flow, flow_jacobian, run_program
from .approx import (
    E_map,
    F_map,
    G_map,
    N_bar,
    N_length,
    approx_exp_program,
    commutator_word,
)
from .ccdist import (
    BudgetError,
    DistanceField,
    GridSpec,
    SamplingError,
    ball_sample,
    ball_volume,
    distance_equivalence_check,
    distance_field,
    doubling_ratio,
    lambda_volume_ratio,
    pair_distance,
    rho_upper,
    sandwich_check,
)
from .convexity import (
    ConvexityReport,
    EstimateReport,
    ScalarFunction,
    gradient_ratio,
    horizontal_second_difference,
    lambda_ratio,
    lipschitz_ratio,
    lower_bound_check,
    pointed_fields,
    sublaplacian_check,
    sup_mean_ratio,
    xconvexity_test,
)
