"""Cross-study gene-expression merging.

Estimates per-study nonlinear distortions and observation noise under a
Bayesian model of intrinsic expression values, then inverts them to
produce adjusted datasets suitable for pooled analysis. The top-level
classes follow the scikit-learn estimator conventions.
"""

from .adjustment import (AdjustmentConfig, AdjustmentResult, StudyMerger,
                         alpha_weight, gradient_check, run_pipeline, update_gene)
from .diffexpr import (DiffResult, compare_callsets, fdr_adjust, run_differential,
                       t_test, variance_filter)
from .distort import DistortionSpec, apply_distortion, split_balanced
from .errors import (AlignmentError, EstimationError, FitError, ParameterError,
                     ParseError, ShapeError, SplitError, XMergeError)
from .estimation import (InvariantSet, InvariantSetSpec, estimate_gene_variances,
                         estimate_means, estimate_noise_variances,
                         estimate_observation_functions, initialize_rectification,
                         select_invariant_genes, select_invariant_sets)
from .pca import pca_coordinates
from .splines import (CubicSpline, SmoothingSpline, SplineFitSpec, gcv_lambda,
                      natural_interpolant)
from .splines import fit as fit_smoothing_spline
from .types import (ExpressionMatrix, GeneModel, PosteriorValue, Study, StudyModel,
                    StudySet, align_gene_universe, posterior)

__version__ = "0.1.0"

__all__ = [
    "AdjustmentConfig", "AdjustmentResult", "AlignmentError", "CubicSpline",
    "DiffResult", "DistortionSpec", "EstimationError", "ExpressionMatrix",
    "FitError", "GeneModel", "InvariantSet", "InvariantSetSpec", "ParameterError",
    "ParseError", "PosteriorValue", "ShapeError", "SmoothingSpline",
    "SplineFitSpec", "SplitError", "Study", "StudyMerger", "StudyModel",
    "StudySet", "XMergeError", "align_gene_universe", "alpha_weight",
    "apply_distortion", "compare_callsets", "estimate_gene_variances",
    "estimate_means", "estimate_noise_variances", "estimate_observation_functions",
    "fdr_adjust", "fit_smoothing_spline", "gcv_lambda", "gradient_check",
    "initialize_rectification", "natural_interpolant", "pca_coordinates",
    "posterior", "run_differential", "run_pipeline", "select_invariant_genes",
    "select_invariant_sets", "split_balanced", "t_test", "update_gene",
    "variance_filter",
]
