"""Imputation and scaling transformers, fitted on training rows only."""
from __future__ import annotations

import warnings

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.pipeline import Pipeline
from sklearn.utils.validation import check_array, check_is_fitted

SCALE_FLOOR = 1e-9


def _as_2d(X):
    return check_array(X, dtype=float, ensure_all_finite="allow-nan")


class MedianImputer(TransformerMixin, BaseEstimator):
    """Fill missing entries with training-column medians.

    Columns that are entirely missing in training are dropped (with a warning)
    and stay dropped at transform time.
    """

    def fit(self, X, y=None):
        X = _as_2d(X)
        self.n_features_in_ = X.shape[1]
        missing = np.all(np.isnan(X), axis=0)
        if missing.any():
            warnings.warn(f"dropping all-missing columns {np.flatnonzero(missing).tolist()}", stacklevel=2)
        self.keep_ = ~missing
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            self.statistics_ = np.nanmedian(X[:, self.keep_], axis=0)
        return self

    def transform(self, X):
        check_is_fitted(self, "statistics_")
        X = _as_2d(X)[:, self.keep_].copy()
        rows, cols = np.nonzero(np.isnan(X))
        X[rows, cols] = self.statistics_[cols]
        return X


class RobustScaler(TransformerMixin, BaseEstimator):
    """``(x - median) / IQR`` with the IQR floored at ``floor``."""

    def __init__(self, floor=SCALE_FLOOR):
        self.floor = floor

    def fit(self, X, y=None):
        X = _as_2d(X)
        self.n_features_in_ = X.shape[1]
        q1, self.center_, q3 = np.percentile(X, [25, 50, 75], axis=0)
        self.scale_ = np.maximum(q3 - q1, self.floor)
        return self

    def transform(self, X):
        check_is_fitted(self, "scale_")
        return (_as_2d(X) - self.center_) / self.scale_


class StandardScaler(TransformerMixin, BaseEstimator):
    """``(x - mean) / std`` (population std) with the std floored at ``floor``."""

    def __init__(self, floor=SCALE_FLOOR):
        self.floor = floor

    def fit(self, X, y=None):
        X = _as_2d(X)
        self.n_features_in_ = X.shape[1]
        self.mean_ = X.mean(axis=0)
        self.scale_ = np.maximum(X.std(axis=0), self.floor)
        return self

    def transform(self, X):
        check_is_fitted(self, "scale_")
        return (_as_2d(X) - self.mean_) / self.scale_


SCALERS = {"robust": RobustScaler, "standard": StandardScaler, "none": None}


def make_preprocessor(scaler: str = "robust") -> Pipeline:
    if scaler not in SCALERS:
        raise ValueError(f"unknown scaler {scaler!r}; choose from {sorted(SCALERS)}")
    steps = [("impute", MedianImputer())]
    if SCALERS[scaler] is not None:
        steps.append(("scale", SCALERS[scaler]()))
    return Pipeline(steps)


def preprocess(X_train, X_test=None, scaler: str = "robust"):
    """Fit imputation and scaling on ``X_train``; apply to both splits."""
    pre = make_preprocessor(scaler).fit(X_train)
    train = pre.transform(X_train)
    return train if X_test is None else (train, pre.transform(X_test))
