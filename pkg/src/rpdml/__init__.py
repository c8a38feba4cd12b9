"""Primal-dual proximal optimization on the SPD manifold, with metric learning."""

from .manifold import (
    EPS_PD,
    EigenDecomposition,
    SpdMatrix,
    eigendecompose,
    logdet_divergence,
    logdet_divergence_gradient,
    project_to_tangent,
    retract,
    spd_inverse,
)
from .solver import (
    BoundParams,
    RunTrace,
    SaddleProblem,
    SolverConfig,
    dual_ascent_step,
    lagrangian,
    positive_part,
    run,
    step_size,
    step_sum_bounds,
    suboptimality_bound,
)
from .metric import (
    MetricModel,
    PairConstraints,
    RpdmlConfig,
    build_pairs,
    compute_bounds,
    eval_h,
    grad_h_contraction,
    inner_solve_w,
    metric_distance,
    train,
    update_gamma,
    update_lambda,
    update_slack,
)
from .data import (
    LabeledDataset,
    PanelDataset,
    PanelPeriod,
    SyntheticSpec,
    generate_synthetic,
    generate_synthetic_panel,
    normalize_features,
)
from .evaluation import (
    PortfolioResult,
    accumulated_return,
    knn_predict,
    mahalanobis_metric,
    max_drawdown,
    rolling_backtest,
    rolling_ic,
    spearman_ic,
)

__version__ = "0.1.0"

__all__ = [
    "EPS_PD",
    "EigenDecomposition",
    "SpdMatrix",
    "eigendecompose",
    "logdet_divergence",
    "logdet_divergence_gradient",
    "project_to_tangent",
    "retract",
    "spd_inverse",
    "BoundParams",
    "RunTrace",
    "SaddleProblem",
    "SolverConfig",
    "dual_ascent_step",
    "lagrangian",
    "positive_part",
    "run",
    "step_size",
    "step_sum_bounds",
    "suboptimality_bound",
    "MetricModel",
    "PairConstraints",
    "RpdmlConfig",
    "build_pairs",
    "compute_bounds",
    "eval_h",
    "grad_h_contraction",
    "inner_solve_w",
    "metric_distance",
    "train",
    "update_gamma",
    "update_lambda",
    "update_slack",
    "LabeledDataset",
    "PanelDataset",
    "PanelPeriod",
    "SyntheticSpec",
    "generate_synthetic",
    "generate_synthetic_panel",
    "normalize_features",
    "PortfolioResult",
    "accumulated_return",
    "knn_predict",
    "mahalanobis_metric",
    "max_drawdown",
    "rolling_backtest",
    "rolling_ic",
    "spearman_ic",
    "__version__",
]
