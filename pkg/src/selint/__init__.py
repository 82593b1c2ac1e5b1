"""Selection-adjusted inference for pairwise interactions after a sparse
additive fit.

The pipeline: build a spline design (spline_basis), select main effects with
a randomized group lasso (group_lasso), form the interaction-augmented key
statistics (interaction_model), and test each candidate interaction with the
randomization-aware maximum likelihood machinery (selective_mle), with naive
and data-splitting baselines (baselines) and a replication harness
(sim_harness) for calibration studies.  The command line lives in cli.
"""

from .baselines import SplitPlan, naive_inference, split_inference, split_selection
from .group_lasso import (
    ConvergenceError,
    GroupLayout,
    RandomizationSpec,
    RandomizedLassoFit,
    SelectionEvent,
    default_lambda,
    estimate_sigma,
    extract_selection_event,
    make_layout,
    sample_randomization,
    solve_randomized_group_lasso,
)
from .interaction_model import (
    KeyStats,
    augmented_design,
    candidate_interactions,
    key_statistics,
)
from .selective_mle import (
    EmptySelectionError,
    InferenceReport,
    ReducedGaussians,
    SelectionMapping,
    approx_log_likelihood,
    build_mapping,
    log_jacobian,
    reduce_gaussians,
    selective_inference,
    selective_mle_and_fisher,
    solve_barrier_problem,
)
from .sim_harness import (
    ALL_METHODS,
    PairResult,
    ReplicationRecord,
    SimSetting,
    build_feature_covariance,
    generate_features,
    generate_response,
    metric_avg_ci_length,
    metric_ecdf_ks,
    metric_f1,
    preset_setting,
    records_frame,
    run_replications,
    sample_interaction_pairs,
    summarize,
    true_targets,
    write_outputs,
)
from .spline_basis import (
    BasisConfig,
    GroupedDesign,
    bspline_basis,
    build_design,
    design_matrix_at,
)

__version__ = "0.1.0"

__all__ = [
    "ALL_METHODS",
    "BasisConfig",
    "ConvergenceError",
    "EmptySelectionError",
    "GroupLayout",
    "GroupedDesign",
    "InferenceReport",
    "KeyStats",
    "PairResult",
    "RandomizationSpec",
    "RandomizedLassoFit",
    "ReducedGaussians",
    "ReplicationRecord",
    "SelectionEvent",
    "SelectionMapping",
    "SimSetting",
    "SplitPlan",
    "approx_log_likelihood",
    "augmented_design",
    "bspline_basis",
    "build_design",
    "build_feature_covariance",
    "build_mapping",
    "candidate_interactions",
    "default_lambda",
    "design_matrix_at",
    "estimate_sigma",
    "extract_selection_event",
    "generate_features",
    "generate_response",
    "key_statistics",
    "log_jacobian",
    "make_layout",
    "metric_avg_ci_length",
    "metric_ecdf_ks",
    "metric_f1",
    "naive_inference",
    "preset_setting",
    "records_frame",
    "reduce_gaussians",
    "run_replications",
    "sample_interaction_pairs",
    "sample_randomization",
    "selective_inference",
    "selective_mle_and_fisher",
    "solve_barrier_problem",
    "solve_randomized_group_lasso",
    "split_inference",
    "split_selection",
    "summarize",
    "true_targets",
    "write_outputs",
]
