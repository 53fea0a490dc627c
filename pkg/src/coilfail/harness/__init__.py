"""Training, evaluation and cross-validation orchestration."""
from .crossval import (
    SEED_RULE,
    CVResult,
    FoldResult,
    SweepResult,
    audit_cv_manifest,
    audit_sweep,
    augmentation_sweep,
    cross_validate,
    dataset_digest,
    run_fold,
)
from .metrics import MEASURES, ConfusionMatrix, MetricsReport, confusion, mean_report, metrics, pooled_report
from .training import (
    TrainConfig,
    TrainingDivergedError,
    best_epoch,
    evaluate_loss,
    predict,
    predict_windows,
    scores_to_labels,
    train,
)

__all__ = [
    "SEED_RULE",
    "CVResult",
    "FoldResult",
    "SweepResult",
    "audit_cv_manifest",
    "audit_sweep",
    "augmentation_sweep",
    "cross_validate",
    "dataset_digest",
    "run_fold",
    "MEASURES",
    "ConfusionMatrix",
    "MetricsReport",
    "confusion",
    "mean_report",
    "metrics",
    "pooled_report",
    "TrainConfig",
    "TrainingDivergedError",
    "best_epoch",
    "evaluate_loss",
    "predict",
    "predict_windows",
    "scores_to_labels",
    "train",
]
