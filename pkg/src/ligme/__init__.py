"""Constrained LiGME estimation with early and asymptotic constraints."""

from .linops import (
    LinearOperator, DenseMatrix, Identity, Zero, BlockDiagonal, HorizontalConcat,
    Composition, Adjoint, Scaled, operator_norm, restricted_min_eigenvalue,
)
from .prox import (
    Box, ConstantLine, DirectSum, FullSpace, Indicator, L1Norm, ProductSet, Singleton,
)
from .gme import (
    GmeDesign, GmePenalty, design_gme_bivariate, design_gme_direct, gme_eval,
    verify_overall_convexity,
)
from .solver import (
    AsymptoticConstraint, Model, Regularizer, SolverState, StepSizes, StoppingRule,
    select_stepsizes, solve, t_ea_apply,
)
from .fused import FusedProblemSpec, build_model, reconstruct, solve_fused
from .estimators import FusedSignalDenoiser, GMCRegressor

__version__ = "0.1.0"
