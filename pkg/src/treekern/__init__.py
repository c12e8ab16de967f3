"""Penalized anisotropic kernel regression over tree-aggregated features.

The estimator is a Nadaraya-Watson smoother whose per-feature inverse
bandwidths are learned by minimizing a leave-one-out loss plus an
adaptively weighted L1 penalty; features are sums of observed leaves
over the nodes of an aggregation tree, and the penalty weights come
from a pilot derivative stage so that irrelevant, heterogeneous, or
redundant nodes are priced out of the model.

Typical use::

    from treekern import build_from_parent_list, fit, predict

    tree = build_from_parent_list(pairs, leaf_order)
    result = fit(tree, X, Y, seed=0)
    yhat, fallback = predict(tree, result.gamma_hat, X, Y, X_new)

The :mod:`treekern.simbench` module generates the benchmark designs,
and ``python -m treekern`` (or the ``treekern`` script) exposes the
fit / predict / simulate pipeline on CSV files.
"""

__version__ = "0.1.0"

from .errors import (
    AllRestartsFailed,
    CholeskyFailed,
    CycleDetected,
    DimensionMismatch,
    DisconnectedNode,
    EmptyInterior,
    IndexOutOfTree,
    LeafOrderMismatch,
    MultipleRoots,
    NotPowerOfTwo,
    NumericalError,
    OptimizationFailed,
    TooFewSamples,
    TreekernError,
    UnknownNode,
    ValidationError,
    ZeroDenominator,
)
from .fit import (
    FitResult,
    SelectConfig,
    cv_select,
    final_fit,
    fit,
    fit_result_to_dict,
    predict,
)
from .kernels import (
    KERNELS,
    LossReport,
    epanechnikov_kernel,
    gaussian_kernel,
    loocv_gradient,
    loocv_loss,
    nw_predict,
    nw_predict_batch,
    pairwise_weights,
)
from .optim import OptimizerConfig, OptResult, SpredState, box_minimize, spred_run
from .pilot import (
    AdaptiveWeights,
    PilotConfig,
    PilotDerivatives,
    compute_weights,
    estimate_derivatives,
    fit_leaf_metric,
    run_pilot,
)
from .simbench import (
    GroundTruth,
    MetricsReport,
    SimConfig,
    build_full_binary_tree,
    evaluate,
    gen_covariates,
    gen_response,
    run_baselines,
    run_experiment,
    true_target_set,
)
from .tree import (
    AggregationTree,
    build_from_parent_list,
    from_a_matrix,
    read_tree_csv,
    write_tree_csv,
)

__all__ = [
    "__version__",
    "AggregationTree",
    "AdaptiveWeights",
    "AllRestartsFailed",
    "CholeskyFailed",
    "CycleDetected",
    "DimensionMismatch",
    "DisconnectedNode",
    "EmptyInterior",
    "FitResult",
    "GroundTruth",
    "IndexOutOfTree",
    "KERNELS",
    "LeafOrderMismatch",
    "LossReport",
    "MetricsReport",
    "MultipleRoots",
    "NotPowerOfTwo",
    "NumericalError",
    "OptimizationFailed",
    "OptimizerConfig",
    "OptResult",
    "PilotConfig",
    "PilotDerivatives",
    "SelectConfig",
    "SimConfig",
    "SpredState",
    "TooFewSamples",
    "TreekernError",
    "UnknownNode",
    "ValidationError",
    "ZeroDenominator",
    "box_minimize",
    "build_from_parent_list",
    "build_full_binary_tree",
    "compute_weights",
    "cv_select",
    "epanechnikov_kernel",
    "estimate_derivatives",
    "evaluate",
    "final_fit",
    "fit",
    "fit_leaf_metric",
    "fit_result_to_dict",
    "from_a_matrix",
    "gaussian_kernel",
    "gen_covariates",
    "gen_response",
    "loocv_gradient",
    "loocv_loss",
    "nw_predict",
    "nw_predict_batch",
    "pairwise_weights",
    "predict",
    "read_tree_csv",
    "run_baselines",
    "run_experiment",
    "run_pilot",
    "spred_run",
    "true_target_set",
    "write_tree_csv",
]
