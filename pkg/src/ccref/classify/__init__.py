from .boosting import Hyperparameters, ModelError, SchemaError, TrainedModel, Tree, predict, train
from .metrics import (
    EvalReport,
    confusion_matrix,
    evaluate,
    per_class_scores,
    random_baseline,
    roc_curve,
    weighted_f1,
)
from .selection import (
    CVResult,
    FoldError,
    cross_validate,
    expand_grid,
    staged_search,
    stratified_folds,
    stratified_split,
)

__all__ = [
    "CVResult",
    "EvalReport",
    "FoldError",
    "Hyperparameters",
    "ModelError",
    "SchemaError",
    "TrainedModel",
    "Tree",
    "confusion_matrix",
    "cross_validate",
    "evaluate",
    "expand_grid",
    "per_class_scores",
    "predict",
    "random_baseline",
    "roc_curve",
    "staged_search",
    "stratified_folds",
    "stratified_split",
    "train",
    "weighted_f1",
]
