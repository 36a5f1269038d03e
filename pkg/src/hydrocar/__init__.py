"""Intrinsic CAR models of disease outcomes on water-supply networks."""

from .estimator import WaterNetworkClassifier
from .exceptions import (
    ConvergenceError,
    HydrocarError,
    NetworkError,
    NotPositiveDefiniteError,
    NumericalError,
    ValidationError,
)
from .inference import FitResult, compute_dic, fit, gaussian_approximation, optimize_hyperparameters
from .model import Dataset, ModelSpec, Participant, build_spatial_lattice, design_matrix, loglik
from .network import (
    PipeSegment,
    WaterNetwork,
    connected_components,
    downstream,
    parse_network,
    simplify,
)
from .precision import (
    PrecisionMatrix,
    Weighting,
    assemble_block_precision,
    build_border_precision,
    build_distance_precision,
)
from .selection import ComparisonTable, run_ladder, significance

__version__ = "0.1.0"
