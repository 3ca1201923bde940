"""Biconvex biclustering with adaptive feature weights."""

from .core import (
    AffinityGraph,
    DataMatrix,
    DEFAULT_TOLERANCES,
    FitState,
    Hyperparameters,
    SimplexWeights,
    Tolerances,
    column_sq_residuals,
    fusion_value,
    objective,
    objective_value,
    weighted_sq_norm,
)
from .graph import build_affinities, spectral_summary
from .palm import PalmConfig, fit
from .prox import (
    CvxBiclustConfig,
    project_simplex,
    solve_convex_biclustering,
    solve_convex_clustering,
)

__version__ = "0.1.0"
