"""Horizontal Gauss curvature flow on step-two Carnot groups.

Group algebra, left-invariant finite differences, an explicit graph-flow
solver, comparison-principle tooling and closed-form oracles.
"""

from .groups import (
    GroupError,
    GroupSpec,
    Point,
    adjoin_real_line,
    bracket,
    dilate,
    frame,
    gauge_distance,
    gauge_norm,
    gauge_power,
    identity,
    inverse,
    make_euclidean,
    make_heisenberg,
    make_htype,
    product,
    quaternionic_J,
)
from .fields import (
    Grid,
    ScalarField,
    SymMatrixField,
    det_plus,
    directional_derivative_oracle,
    eigvals,
    horizontal_gradient,
    horizontal_hessian,
    second_layer_gradient,
)
from .geometry import (
    CharacteristicPointError,
    classify_convexity,
    graph_flow_rhs,
    graph_gauss_curvature,
    horizontal_normal,
    levelset_flow_rhs,
    thm412_hypothesis_residual,
)
from .solver import FlowProblem, FlowTrace, SolverAbort, compare_runs, run, stable_dt, step
from .kernels import BACKEND

__version__ = "0.1.0"
