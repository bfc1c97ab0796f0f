"""Probabilistic multi-class classifiers behind one interface.

Every model exposes ``fit(X, y, n_classes)``, ``predict_proba(X)`` and
``predict(X)``. Only :class:`SoftmaxRegression` is gradient-capable, which
is what the expected-gradient-length strategy needs.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import softmax

from .errors import (
    DimensionMismatch,
    EmptyTrainSet,
    GradientUnsupported,
    SingleClassTrainSet,
    UntrainedModel,
)

__all__ = [
    "ModelConfig",
    "ProbabilisticClassifier",
    "SoftmaxRegression",
    "BaggedCommittee",
    "BoostedStumps",
    "fit",
    "fit_arrays",
    "predict_proba",
    "predict",
    "training_gradient_norm",
]

MODEL_KINDS = ("softmax_regression", "bagged_committee", "boosted_stumps")


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "softmax_regression"
    learning_rate: float = 0.1
    n_iterations: int = 500
    l2: float = 1e-4
    committee_size: int = 8
    n_rounds: int = 50
    max_depth: int = 1
    include_sensitive: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {MODEL_KINDS}")
        if self.n_iterations < 0 or self.learning_rate <= 0 or self.l2 < 0:
            raise ValueError("invalid optimizer settings")
        if self.committee_size < 1 or self.n_rounds < 1 or self.max_depth < 1:
            raise ValueError("committee_size, n_rounds and max_depth must be positive")


def _as_matrix(X):
    X = np.asarray(X, dtype=np.float64)
    return X[None, :] if X.ndim == 1 else X


def _argmax_lowest(P):
    # np.argmax already returns the first maximal index
    return np.argmax(P, axis=-1)


class ProbabilisticClassifier:
    kind = None

    def __init__(self, config: ModelConfig | None = None):
        self.config = config or ModelConfig(kind=self.kind)
        self.n_classes = None
        self.n_features = None

    @property
    def trained(self):
        return self.n_classes is not None

    def _check_input(self, X):
        if not self.trained:
            raise UntrainedModel(f"{type(self).__name__} has not been fitted")
        single = np.ndim(X) == 1
        X = _as_matrix(X)
        if X.shape[1] != self.n_features:
            raise DimensionMismatch(f"expected {self.n_features} features, got {X.shape[1]}")
        return X, single

    def _start_fit(self, X, y, n_classes):
        X = _as_matrix(X)
        y = np.asarray(y, dtype=np.int64)
        if X.shape[0] == 0:
            raise EmptyTrainSet("cannot fit on an empty training set")
        if X.shape[0] != y.shape[0]:
            raise DimensionMismatch("X and y have different numbers of rows")
        self.n_classes = int(n_classes if n_classes is not None else y.max() + 1)
        self.n_features = X.shape[1]
        return X, y

    def predict_proba(self, X):
        X, single = self._check_input(X)
        P = self._proba(X)
        return P[0] if single else P

    def predict(self, X):
        return _argmax_lowest(self.predict_proba(X))

    def _proba(self, X):
        raise NotImplementedError

    def gradient_norms(self, X):
        raise GradientUnsupported(f"{self.kind} has no training gradient")


class SoftmaxRegression(ProbabilisticClassifier):
    """Multinomial logistic regression fitted by full-batch gradient descent.

    Minimizes mean cross-entropy plus ``l2 / 2 * ||W||^2`` (bias not
    penalized), starting from all-zero parameters, so the fit is fully
    deterministic.
    """

    kind = "softmax_regression"

    def __init__(self, config=None):
        super().__init__(config)
        self.coef_ = None
        self.intercept_ = None

    def fit(self, X, y, n_classes=None):
        X, y = self._start_fit(X, y, n_classes)
        self.coef_ = np.zeros((self.n_classes, self.n_features))
        self.intercept_ = np.zeros(self.n_classes)
        self._descend(X, y, self.config.n_iterations)
        return self

    def _descend(self, X, y, n_steps):
        n = X.shape[0]
        Y = np.zeros((n, self.n_classes))
        Y[np.arange(n), y] = 1.0
        lr, l2 = self.config.learning_rate, self.config.l2
        W, b = self.coef_, self.intercept_
        Xt = X.T / n
        for _ in range(n_steps):
            Z = X @ W.T + b
            Z -= Z.max(axis=1, keepdims=True)
            E = np.exp(Z)
            G = E / E.sum(axis=1, keepdims=True) - Y
            W = W - lr * ((Xt @ G).T + l2 * W)
            b = b - lr * G.mean(axis=0)
        self.coef_, self.intercept_ = W, b

    def warm_start(self, X, y, n_steps):
        """Copy of this model after ``n_steps`` more descent steps on ``(X, y)``."""
        X, _ = self._check_input(X)
        clone = copy.copy(self)
        clone._descend(X, np.asarray(y, dtype=np.int64), n_steps)
        return clone

    def decision_function(self, X):
        X, single = self._check_input(X)
        Z = X @ self.coef_.T + self.intercept_
        return Z[0] if single else Z

    def _proba(self, X):
        return softmax(X @ self.coef_.T + self.intercept_, axis=1)

    def gradient_norms(self, X):
        """Per-example cross-entropy gradient norms, shape ``(n, K)``.

        For label ``k`` the gradient w.r.t. ``(W, b)`` is the outer product
        ``(p - e_k) (x, 1)``, whose Frobenius norm factorizes.
        """
        X, _ = self._check_input(X)
        P = self._proba(X)
        x_norm = np.sqrt((X * X).sum(axis=1) + 1.0)
        sq = (P * P).sum(axis=1, keepdims=True)
        # ||p - e_k||^2 = ||p||^2 - 2 p_k + 1
        resid = np.sqrt(np.maximum(sq - 2.0 * P + 1.0, 0.0))
        return resid * x_norm[:, None]


class BaggedCommittee(ProbabilisticClassifier):
    """Average of ``committee_size`` softmax regressions on bootstrap resamples."""

    kind = "bagged_committee"

    def fit(self, X, y, n_classes=None):
        X, y = self._start_fit(X, y, n_classes)
        rng = np.random.default_rng(self.config.seed)
        member_cfg = replace(self.config, kind="softmax_regression")
        n = X.shape[0]
        self.members_ = []
        for _ in range(self.config.committee_size):
            rows = rng.integers(0, n, size=n)
            self.members_.append(SoftmaxRegression(member_cfg).fit(X[rows], y[rows], self.n_classes))
        return self

    def member_probas(self, X):
        X, _ = self._check_input(X)
        return np.stack([m._proba(X) for m in self.members_])

    def _proba(self, X):
        return np.mean([m._proba(X) for m in self.members_], axis=0)


class _Tree:
    """Weighted depth-limited classification tree minimizing weighted error."""

    def __init__(self, max_depth):
        self.max_depth = max_depth

    def fit(self, X, y, w, n_classes):
        self.n_classes = n_classes
        self.root = self._grow(X, y, w, depth=0)
        return self

    def _leaf(self, y, w):
        counts = np.bincount(y, weights=w, minlength=self.n_classes)
        return ("leaf", int(np.argmax(counts)))

    def _grow(self, X, y, w, depth):
        node = self._leaf(y, w)
        if depth >= self.max_depth or len(np.unique(y)) < 2:
            return node
        split = _best_split(X, y, w, self.n_classes)
        if split is None:
            return node
        j, thr = split
        left = X[:, j] <= thr
        return ("split", j, thr,
                self._grow(X[left], y[left], w[left], depth + 1),
                self._grow(X[~left], y[~left], w[~left], depth + 1))

    def predict(self, X):
        out = np.empty(X.shape[0], dtype=np.int64)
        self._route(self.root, X, np.arange(X.shape[0]), out)
        return out

    def _route(self, node, X, idx, out):
        if node[0] == "leaf":
            out[idx] = node[1]
            return
        _, j, thr, lo, hi = node
        left = X[idx, j] <= thr
        self._route(lo, X, idx[left], out)
        self._route(hi, X, idx[~left], out)


def _best_split(X, y, w, n_classes):
    n, d = X.shape
    onehot = np.zeros((n, n_classes))
    onehot[np.arange(n), y] = w
    total = onehot.sum(axis=0)
    best_err, best = total.sum() - total.max(), None
    for j in range(d):
        order = np.argsort(X[:, j], kind="stable")
        xs = X[order, j]
        cum = np.cumsum(onehot[order], axis=0)[:-1]
        valid = xs[1:] > xs[:-1]
        if not valid.any():
            continue
        err = (cum.sum(axis=1) - cum.max(axis=1)) + ((total - cum).sum(axis=1) - (total - cum).max(axis=1))
        err = np.where(valid, err, np.inf)
        i = int(np.argmin(err))
        if err[i] < best_err - 1e-12:
            best_err, best = err[i], (j, 0.5 * (xs[i] + xs[i + 1]))
    return best


class BoostedStumps(ProbabilisticClassifier):
    """Multi-class AdaBoost (SAMME) over depth-limited trees.

    Probabilities are the softmax of the normalized SAMME decision values,
    ``sum_m alpha_m (1[h_m = k] - 1[h_m != k] / (K - 1)) / sum_m alpha_m``,
    scaled by ``1 / (K - 1)``.
    """

    kind = "boosted_stumps"

    def fit(self, X, y, n_classes=None):
        X, y = self._start_fit(X, y, n_classes)
        K = self.n_classes
        n = X.shape[0]
        w = np.full(n, 1.0 / n)
        self.estimators_, self.alphas_ = [], []
        for _ in range(self.config.n_rounds):
            tree = _Tree(self.config.max_depth).fit(X, y, w, K)
            miss = tree.predict(X) != y
            err = float(w[miss].sum() / w.sum())
            if err <= 1e-12:
                self.estimators_.append(tree)
                self.alphas_.append(1.0)
                break
            if err >= 1.0 - 1.0 / K:
                if not self.estimators_:
                    self.estimators_.append(tree)
                    self.alphas_.append(1.0)
                break
            alpha = np.log((1.0 - err) / err) + np.log(K - 1.0)
            self.estimators_.append(tree)
            self.alphas_.append(alpha)
            w = w * np.exp(alpha * miss)
            w /= w.sum()
        self.alphas_ = np.asarray(self.alphas_)
        return self

    def member_votes(self, X):
        """Hard votes of every boosting round, shape ``(C, n)``, and their weights."""
        X, _ = self._check_input(X)
        return np.stack([t.predict(X) for t in self.estimators_]), self.alphas_.copy()

    def _proba(self, X):
        K = self.n_classes
        votes = np.stack([t.predict(X) for t in self.estimators_])
        hit = votes[:, :, None] == np.arange(K)
        signed = np.where(hit, 1.0, -1.0 / (K - 1))
        decision = np.tensordot(self.alphas_, signed, axes=1) / self.alphas_.sum()
        return softmax(decision / (K - 1), axis=1)


_CLASSES = {
    "softmax_regression": SoftmaxRegression,
    "bagged_committee": BaggedCommittee,
    "boosted_stumps": BoostedStumps,
}


def fit_arrays(config: ModelConfig, X, y, n_classes, seed=None):
    """Fit a model on raw arrays without the cold-start label check.

    Committee members and bootstrap fits go through here: a bootstrap may
    legitimately contain a single class.
    """
    if seed is not None:
        config = replace(config, seed=int(seed))
    return _CLASSES[config.kind](config).fit(X, y, n_classes)


def fit(config: ModelConfig, train, features=None):
    """Fit ``config`` on a labeled :class:`~fairal.datasets.Dataset`.

    ``features`` overrides ``train.X`` (e.g. standardized inputs with the
    sensitive column appended).
    """
    X = train.X if features is None else features
    if len(train) == 0:
        raise EmptyTrainSet("training set is empty")
    if train.y is None:
        raise ValueError("training set must be labeled")
    if len(np.unique(train.y)) < 2:
        raise SingleClassTrainSet("training set holds a single class")
    return fit_arrays(config, X, train.y, train.n_classes)


def predict_proba(model: ProbabilisticClassifier, x):
    return model.predict_proba(x)


def predict(model: ProbabilisticClassifier, x):
    return model.predict(x)


def training_gradient_norm(model: ProbabilisticClassifier, x, k: int) -> float:
    """Norm of the single-example cross-entropy gradient at ``(x, k)``."""
    return float(model.gradient_norms(np.atleast_2d(x))[0, k])
