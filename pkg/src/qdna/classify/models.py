"""Binary device classifiers: L1 nearest centroid, L2 logistic regression, random forest."""
from __future__ import annotations

import hashlib
import math
import warnings

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y


class ConvergenceWarning(UserWarning):
    pass


def _binary_targets(estimator, y):
    estimator.classes_ = unique_labels(y)
    if len(estimator.classes_) < 2:
        raise ValueError(f"need two classes to train, got {list(estimator.classes_)}")
    if len(estimator.classes_) > 2:
        raise ValueError("only binary classification is supported")
    return (y == estimator.classes_[1]).astype(float)


class NearestCentroidL1(ClassifierMixin, BaseEstimator):
    """Class centre = per-column median; predict the class at minimum L1 distance.

    Ties go to the first class in sorted label order. ``predict_proba`` gives
    class ``k`` the weight ``d_other / (d_k + d_other)``.
    """

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float)
        _binary_targets(self, y)
        self.n_features_in_ = X.shape[1]
        self.centroids_ = np.stack([np.median(X[y == c], axis=0) for c in self.classes_])
        return self

    def distances(self, X):
        check_is_fitted(self, "centroids_")
        X = check_array(X, dtype=float)
        return np.abs(X[:, None, :] - self.centroids_[None, :, :]).sum(axis=2)

    def predict(self, X):
        return self.classes_[np.argmin(self.distances(X), axis=1)]

    def predict_proba(self, X):
        d = self.distances(X)
        total = d.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            proba = np.where(total > 0, d[:, ::-1] / total, 0.5)
        return proba


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def logistic_objective(params, X, t, sample_weight, l2_lambda):
    """Weighted mean negative log-likelihood + (lambda/2)||w||^2 and its gradient.

    ``params`` is ``[w..., b]``; the bias is not penalised. Weights are
    normalised to mean 1 so ``l2_lambda`` does not depend on sample count.
    """
    w, b = params[:-1], params[-1]
    z = X @ w + b
    sw = sample_weight / sample_weight.mean()
    n = X.shape[0]
    # log(1 + e^z) - t z, computed stably
    nll = np.sum(sw * (np.logaddexp(0.0, z) - t * z)) / n
    loss = nll + 0.5 * l2_lambda * float(w @ w)
    r = sw * (sigmoid(z) - t) / n
    grad = np.empty_like(params)
    grad[:-1] = X.T @ r + l2_lambda * w
    grad[-1] = r.sum()
    return loss, grad


class L2LogisticRegression(ClassifierMixin, BaseEstimator):
    """Logistic regression fitted by deterministic full-batch gradient descent.

    Stops when the gradient's infinity norm falls below ``tol`` or after
    ``max_iter`` steps; ``converged_`` records which. ``class_weight="balanced"``
    weights each class by ``n / (2 n_c)``.
    """

    def __init__(self, l2_lambda=0.1, class_weight=None, tol=1e-6, max_iter=5000):
        self.l2_lambda = l2_lambda
        self.class_weight = class_weight
        self.tol = tol
        self.max_iter = max_iter

    def _weights(self, t):
        if self.class_weight is None:
            return np.ones_like(t)
        if self.class_weight != "balanced":
            raise ValueError("class_weight must be None or 'balanced'")
        n1 = t.sum()
        n0 = t.size - n1
        return np.where(t == 1, t.size / (2 * n1), t.size / (2 * n0))

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float)
        t = _binary_targets(self, y)
        self.n_features_in_ = X.shape[1]
        sw = self._weights(t)
        # step = 1/L with L the gradient's Lipschitz constant
        spectral = np.linalg.norm(np.hstack([X, np.ones((X.shape[0], 1))]), 2) ** 2
        lipschitz = 0.25 * spectral * (sw / sw.mean()).max() / X.shape[0] + self.l2_lambda
        step = 1.0 / lipschitz
        params = np.zeros(X.shape[1] + 1)
        self.converged_ = False
        for it in range(1, self.max_iter + 1):
            _, grad = logistic_objective(params, X, t, sw, self.l2_lambda)
            if np.max(np.abs(grad)) < self.tol:
                self.converged_ = True
                break
            params -= step * grad
        self.n_iter_ = it
        if not self.converged_:
            warnings.warn(f"gradient descent stopped after {self.max_iter} iterations", ConvergenceWarning, stacklevel=2)
        self.coef_, self.intercept_ = params[:-1].copy(), float(params[-1])
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        return check_array(X, dtype=float) @ self.coef_ + self.intercept_

    def predict_proba(self, X):
        p1 = sigmoid(self.decision_function(X))
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X):
        return self.classes_[(self.predict_proba(X)[:, 1] >= 0.5).astype(int)]


def _gini(counts):
    total = counts.sum(axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = counts / total[..., None]
    return 1.0 - np.nansum(p * p, axis=-1)


class DecisionTree:
    """CART tree on Gini impurity with per-split random feature subsets."""

    def __init__(self, max_depth, min_leaf, max_features, rng):
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.max_features = max_features
        self.rng = rng
        # node arrays: feature, threshold, left, right, class-1 probability
        self.nodes = []

    def fit(self, X, t):
        self._grow(X, t, np.arange(len(t)), 0)
        self.nodes = np.array(self.nodes, dtype=float)
        return self

    def _leaf(self, t, idx):
        self.nodes.append([-1, 0.0, -1, -1, float(t[idx].mean()) if idx.size else 0.5])
        return len(self.nodes) - 1

    def _best_split(self, X, t, idx):
        d = X.shape[1]
        features = self.rng.choice(d, size=min(self.max_features, d), replace=False)
        n = idx.size
        parent = _gini(np.array([n - t[idx].sum(), t[idx].sum()]))
        best = (0.0, None, None)
        for f in features:
            order = idx[np.argsort(X[idx, f], kind="stable")]
            xs, ts = X[order, f], t[order]
            ones_left = np.cumsum(ts)[:-1]
            n_left = np.arange(1, n)
            left = np.column_stack([n_left - ones_left, ones_left])
            right = np.column_stack([(n - n_left) - (ts.sum() - ones_left), ts.sum() - ones_left])
            valid = (xs[1:] > xs[:-1]) & (n_left >= self.min_leaf) & (n - n_left >= self.min_leaf)
            if not valid.any():
                continue
            impurity = (n_left * _gini(left) + (n - n_left) * _gini(right)) / n
            gain = np.where(valid, parent - impurity, -np.inf)
            k = int(np.argmax(gain))
            if gain[k] > best[0] + 1e-12:
                best = (gain[k], int(f), 0.5 * (xs[k] + xs[k + 1]))
        return best[1], best[2]

    def _grow(self, X, t, idx, depth):
        pure = t[idx].min() == t[idx].max() if idx.size else True
        if pure or depth >= self.max_depth or idx.size < 2 * self.min_leaf:
            return self._leaf(t, idx)
        feature, threshold = self._best_split(X, t, idx)
        if feature is None:
            return self._leaf(t, idx)
        node = len(self.nodes)
        self.nodes.append([feature, threshold, -1, -1, float(t[idx].mean())])
        mask = X[idx, feature] <= threshold
        left = self._grow(X, t, idx[mask], depth + 1)
        right = self._grow(X, t, idx[~mask], depth + 1)
        self.nodes[node][2], self.nodes[node][3] = left, right
        return node

    def predict_proba1(self, X):
        nodes = self.nodes
        at = np.zeros(X.shape[0], dtype=int)
        active = nodes[at, 0] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            cur = at[rows]
            go_left = X[rows, nodes[cur, 0].astype(int)] <= nodes[cur, 1]
            at[rows] = np.where(go_left, nodes[cur, 2], nodes[cur, 3]).astype(int)
            active = nodes[at, 0] >= 0
        return nodes[at, 4]


def _tree_rng(seed, index):
    digest = hashlib.sha256(f"qdna-tree\x1f{seed}\x1f{index}".encode()).digest()
    return np.random.Generator(np.random.Philox(key=int.from_bytes(digest[:16], "big")))


class RandomForest(ClassifierMixin, BaseEstimator):
    """Bagged Gini trees with ceil(sqrt(d)) candidate features per split.

    Each tree draws its bootstrap sample and feature subsets from its own
    stream derived from ``(random_state, tree index)``, so the forest is a
    pure function of the data and ``random_state``.
    """

    def __init__(self, n_trees=200, max_depth=6, min_leaf=2, random_state=0):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float)
        t = _binary_targets(self, y)
        if X.shape[0] < 2 * self.min_leaf:
            raise ValueError(f"need at least {2 * self.min_leaf} samples, got {X.shape[0]}")
        self.n_features_in_ = X.shape[1]
        m = math.ceil(math.sqrt(X.shape[1]))
        self.trees_ = []
        for i in range(self.n_trees):
            rng = _tree_rng(self.random_state, i)
            boot = rng.integers(0, X.shape[0], X.shape[0])
            tree = DecisionTree(self.max_depth, self.min_leaf, m, rng).fit(X[boot], t[boot])
            self.trees_.append(tree)
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "trees_")
        X = check_array(X, dtype=float)
        p1 = np.mean([tree.predict_proba1(X) for tree in self.trees_], axis=0)
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X):
        return self.classes_[(self.predict_proba(X)[:, 1] >= 0.5).astype(int)]
