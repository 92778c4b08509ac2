"""Random forest, ROC/AUC and the raw-versus-adjusted evaluation protocol."""

from .forest import Forest, ForestParams, Tree, fit_forest, predict_proba
from .protocol import (
    REPLICATE_STRATEGY,
    EvaluationResult,
    average_over_replicates,
    evaluate_replicates,
    group_parity,
    out_of_fold_scores,
)
from .roc import RocCurve, roc_and_auc

__all__ = [
    "Forest",
    "ForestParams",
    "Tree",
    "fit_forest",
    "predict_proba",
    "RocCurve",
    "roc_and_auc",
    "average_over_replicates",
    "evaluate_replicates",
    "out_of_fold_scores",
    "group_parity",
    "EvaluationResult",
    "REPLICATE_STRATEGY",
]
