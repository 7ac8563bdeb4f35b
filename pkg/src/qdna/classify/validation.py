"""Stratified cross-validation and the nearest-centroid permutation test."""
from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import clone
from sklearn.metrics import confusion_matrix, precision_recall_fscore_support, roc_auc_score
from sklearn.model_selection import BaseCrossValidator
from sklearn.pipeline import Pipeline

from .models import L2LogisticRegression, NearestCentroidL1, RandomForest
from .preprocessing import MedianImputer, RobustScaler, StandardScaler

MODEL_KINDS = ("nearest_centroid", "random_forest", "logistic_regression")
MODEL_LABELS = {
    "nearest_centroid": "Nearest Centroid L1",
    "random_forest": "Random Forest",
    "logistic_regression": "Logistic Regression (L2)",
}
DEFAULT_FOLDS = 6
ACC_TIE_TOL = 1e-12


def _stream(seed, *labels):
    digest = hashlib.sha256("\x1f".join(["qdna-cv", str(seed), *map(str, labels)]).encode()).digest()
    return np.random.Generator(np.random.Philox(key=int.from_bytes(digest[:16], "big")))


class StratifiedRoundRobinKFold(BaseCrossValidator):
    """Shuffle each class with a seeded stream, then deal its members to folds in turn."""

    def __init__(self, n_splits=DEFAULT_FOLDS, random_state=0):
        self.n_splits = n_splits
        self.random_state = random_state

    def get_n_splits(self, X=None, y=None, groups=None):
        return self.n_splits

    def fold_ids(self, y):
        y = np.asarray(y)
        if self.n_splits < 2:
            raise ValueError("need at least 2 folds")
        fold = np.empty(len(y), dtype=int)
        for label in np.unique(y):
            members = np.flatnonzero(y == label)
            if members.size < self.n_splits:
                raise ValueError(f"class {label!r} has {members.size} samples, fewer than {self.n_splits} folds")
            members = _stream(self.random_state, "fold", label).permutation(members)
            fold[members] = np.arange(members.size) % self.n_splits
        return fold

    def _iter_test_masks(self, X=None, y=None, groups=None):
        fold = self.fold_ids(y)
        for k in range(self.n_splits):
            yield fold == k


def make_model(kind: str, random_state=0, *, l2_lambda=0.1, class_weight=None, n_trees=200, max_depth=6, min_leaf=2):
    if kind == "nearest_centroid":
        return Pipeline([("impute", MedianImputer()), ("scale", RobustScaler()), ("model", NearestCentroidL1())])
    if kind == "logistic_regression":
        return Pipeline(
            [
                ("impute", MedianImputer()),
                ("scale", StandardScaler()),
                ("model", L2LogisticRegression(l2_lambda=l2_lambda, class_weight=class_weight)),
            ]
        )
    if kind == "random_forest":
        forest = RandomForest(n_trees=n_trees, max_depth=max_depth, min_leaf=min_leaf, random_state=random_state)
        return Pipeline([("impute", MedianImputer()), ("model", forest)])
    raise ValueError(f"unknown model kind {kind!r}; choose from {MODEL_KINDS}")


def best_threshold(y_true01, scores):
    """Score cut maximising accuracy of ``scores >= thr``; ties go to the lowest cut."""
    candidates = np.unique(np.concatenate([scores, [np.inf]]))
    acc = [np.mean((scores >= c) == y_true01) for c in candidates]
    return float(candidates[int(np.argmax(acc))])


@dataclass
class FoldResult:
    fold: int
    n_test: int
    accuracy: float
    auc: float
    precision: float
    recall: float
    f1: float
    threshold: float | None
    confusion: list[list[int]]


@dataclass
class ModelReport:
    model: str
    folds: list[FoldResult]
    predictions: list[dict] = field(default_factory=list)

    def _stat(self, name, fn):
        return float(fn([getattr(f, name) for f in self.folds]))

    def summary(self) -> dict:
        out = {"model": self.model, "label": MODEL_LABELS.get(self.model, self.model)}
        for name in ("accuracy", "auc", "precision", "recall", "f1"):
            out[f"{name}_mean"] = self._stat(name, np.mean)
            out[f"{name}_std"] = self._stat(name, np.std)
        return out


@dataclass
class CVReport:
    classes: list[str]
    n_folds: int
    seed: int
    opt_threshold: bool
    models: dict[str, ModelReport]
    permutation_pvalue: float | None = None
    n_permutations: int = 0
    true_accuracy: float | None = None

    def to_dict(self) -> dict:
        return {
            "classes": list(self.classes),
            "n_folds": self.n_folds,
            "seed": self.seed,
            "opt_threshold": self.opt_threshold,
            "threshold_note": "optimistic: threshold chosen on test folds" if self.opt_threshold else "fixed 0.5",
            "models": {
                k: {**m.summary(), "folds": [f.__dict__ for f in m.folds]} for k, m in self.models.items()
            },
            "permutation": {
                "model": "nearest_centroid",
                "n_permutations": self.n_permutations,
                "true_accuracy": self.true_accuracy,
                "p_value": self.permutation_pvalue,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def summary_rows(self) -> list[dict]:
        rows = []
        for kind, m in self.models.items():
            row = m.summary()
            row["permutation_p_value"] = self.permutation_pvalue if kind == "nearest_centroid" else None
            rows.append(row)
        return rows

    def fold_csv(self) -> str:
        buf = io.StringIO()
        cols = ["model", "fold", "n_test", "accuracy", "auc", "precision", "recall", "f1", "threshold", "confusion"]
        writer = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        writer.writeheader()
        for kind, m in self.models.items():
            for f in m.folds:
                row = {k: v for k, v in f.__dict__.items() if k in cols}
                row["confusion"] = json.dumps(f.confusion)
                writer.writerow({"model": kind, **row})
        return buf.getvalue()


def _fold_outputs(kind, X, y, classes, splitter, opt_threshold, seed, model_params):
    """Yield ``(fold, test_idx, scores, predicted 0/1, threshold)`` per fold."""
    estimator = make_model(kind, seed, **model_params)
    y01 = (y == classes[1]).astype(int)
    for k, (train, test) in enumerate(splitter.split(X, y)):
        model = clone(estimator).fit(X[train], y[train])
        scores = model.predict_proba(X[test])[:, 1]
        if opt_threshold:
            thr = best_threshold(y01[test], scores)
            pred01 = (scores >= thr).astype(int)
        else:
            # the fitted model's own rule, so nearest-centroid ties follow its tie-break
            thr = None
            pred01 = (model.predict(X[test]) == classes[1]).astype(int)
        yield k, test, scores, pred01, thr


def _run_model(kind, X, y, classes, splitter, opt_threshold, seed, model_params):
    folds, predictions = [], []
    y01 = (y == classes[1]).astype(int)
    for k, test, scores, pred01, thr in _fold_outputs(kind, X, y, classes, splitter, opt_threshold, seed, model_params):
        truth = y01[test]
        p, r, f1, _ = precision_recall_fscore_support(truth, pred01, labels=[0, 1], average="macro", zero_division=0)
        folds.append(
            FoldResult(
                fold=k,
                n_test=int(test.size),
                accuracy=float(np.mean(pred01 == truth)),
                auc=float(roc_auc_score(truth, scores)),
                precision=float(p),
                recall=float(r),
                f1=float(f1),
                threshold=thr,
                confusion=confusion_matrix(truth, pred01, labels=[0, 1]).tolist(),
            )
        )
        predictions.extend(
            {
                "model": kind,
                "fold": k,
                "index": int(i),
                "label": str(y[i]),
                "score": float(s),
                "predicted": str(classes[q]),
            }
            for i, s, q in zip(test, scores, pred01)
        )
    return ModelReport(kind, folds, predictions)


def mean_cv_accuracy(kind, X, y, n_folds=DEFAULT_FOLDS, seed=0, **model_params) -> float:
    y = np.asarray(y)
    classes = np.unique(y)
    y01 = (y == classes[1]).astype(int)
    splitter = StratifiedRoundRobinKFold(n_folds, seed)
    outputs = _fold_outputs(kind, X, y, classes, splitter, False, seed, model_params)
    return float(np.mean([np.mean(pred == y01[test]) for _, test, _, pred, _ in outputs]))


def permutation_pvalue(n_at_least: int, n_perm: int) -> float:
    """(1 + #permutations with accuracy >= the true accuracy) / (1 + N)."""
    if n_perm < 1 or not 0 <= n_at_least <= n_perm:
        raise ValueError("need 0 <= n_at_least <= n_perm and n_perm >= 1")
    return (1 + n_at_least) / (1 + n_perm)


@dataclass
class PermutationResult:
    true_accuracy: float
    permuted: np.ndarray
    n_at_least: int
    p_value: float


def permutation_test(X, y, n_perm=999, seed=0, n_folds=DEFAULT_FOLDS) -> PermutationResult:
    """Nearest-centroid CV accuracy against label-shuffled refits.

    Each permutation re-stratifies on the shuffled labels with the same fold
    seed. Accuracies within 1e-12 of the true one count as "at least".
    """
    if n_perm < 1:
        raise ValueError("n_perm must be >= 1")
    X, y = np.asarray(X, dtype=float), np.asarray(y)
    true_acc = mean_cv_accuracy("nearest_centroid", X, y, n_folds, seed)
    rng = _stream(seed, "permutation")
    permuted = np.array([mean_cv_accuracy("nearest_centroid", X, rng.permutation(y), n_folds, seed) for _ in range(n_perm)])
    hits = int(np.sum(permuted >= true_acc - ACC_TIE_TOL))
    return PermutationResult(true_acc, permuted, hits, permutation_pvalue(hits, n_perm))


def cross_validate(
    kind,
    X,
    y,
    folds=DEFAULT_FOLDS,
    opt_threshold=False,
    seed=0,
    **model_params,
) -> ModelReport:
    X, y = np.asarray(X, dtype=float), np.asarray(y)
    classes = np.unique(y)
    if classes.size != 2:
        raise ValueError(f"need exactly two classes, got {classes.tolist()}")
    return _run_model(kind, X, y, classes, StratifiedRoundRobinKFold(folds, seed), opt_threshold, seed, model_params)


def run_pipeline(
    X,
    y,
    folds=DEFAULT_FOLDS,
    opt_threshold=False,
    seed=0,
    n_perm=999,
    models=MODEL_KINDS,
    **model_params,
) -> CVReport:
    """All models under the same folds, plus the nearest-centroid permutation test."""
    X, y = np.asarray(X, dtype=float), np.asarray(y)
    reports = {k: cross_validate(k, X, y, folds, opt_threshold, seed, **model_params) for k in models}
    report = CVReport(
        classes=[str(c) for c in np.unique(y)],
        n_folds=folds,
        seed=seed,
        opt_threshold=opt_threshold,
        models=reports,
    )
    if n_perm:
        perm = permutation_test(X, y, n_perm, seed, folds)
        report.permutation_pvalue = perm.p_value
        report.n_permutations = n_perm
        report.true_accuracy = perm.true_accuracy
    return report
