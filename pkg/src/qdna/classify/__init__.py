"""Device classification over session feature files."""
from .matrix import DEFAULT_METRICS, FeatureMatrix, assemble_matrix, list_feature_files
from .models import L2LogisticRegression, NearestCentroidL1, RandomForest, logistic_objective
from .preprocessing import MedianImputer, RobustScaler, StandardScaler, make_preprocessor, preprocess
from .validation import (
    MODEL_KINDS,
    CVReport,
    StratifiedRoundRobinKFold,
    cross_validate,
    make_model,
    mean_cv_accuracy,
    permutation_pvalue,
    permutation_test,
    run_pipeline,
)

__all__ = [
    "DEFAULT_METRICS",
    "FeatureMatrix",
    "assemble_matrix",
    "list_feature_files",
    "L2LogisticRegression",
    "NearestCentroidL1",
    "RandomForest",
    "logistic_objective",
    "MedianImputer",
    "RobustScaler",
    "StandardScaler",
    "make_preprocessor",
    "preprocess",
    "MODEL_KINDS",
    "CVReport",
    "StratifiedRoundRobinKFold",
    "cross_validate",
    "make_model",
    "mean_cv_accuracy",
    "permutation_pvalue",
    "permutation_test",
    "run_pipeline",
]
