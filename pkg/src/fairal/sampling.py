"""Importance scores for pool-based query strategies and batch selection.

Every score follows the convention "higher means more informative", so a
single top-b rule selects queries for all strategies. Criteria that are
minimized in their usual form (least confidence, expected error) are
returned negated.

Score functions accept either a single probability vector ``(K,)`` or a
matrix of row vectors ``(n, K)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import entr

from .errors import (
    BatchExceedsPool,
    CommitteeTooSmall,
    EmptyPool,
    GradientUnsupported,
    InvalidDistribution,
)
from .models import BoostedStumps, ModelConfig, fit_arrays

__all__ = [
    "STRATEGY_KINDS",
    "KL_FLOOR",
    "ScoredPool",
    "QueryStrategy",
    "PoolContext",
    "entropy_score",
    "least_confident_score",
    "vote_entropy_score",
    "mean_kl_score",
    "egl_score",
    "eer_score",
    "representativeness",
    "information_density_score",
    "select_batch",
]

STRATEGY_KINDS = (
    "random",
    "least_confident",
    "entropy",
    "qbag_vote_entropy",
    "qbag_mean_kl",
    "qboost_vote_entropy",
    "egl",
    "eer",
    "information_density",
)

KL_FLOOR = 1e-12
_SUM_TOL = 1e-6


def _check_proba(p):
    p = np.asarray(p, dtype=np.float64)
    if p.ndim not in (1, 2) or p.shape[-1] < 1:
        raise InvalidDistribution(f"expected a (K,) or (n, K) array, got shape {p.shape}")
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=-1) - 1.0) > _SUM_TOL):
        raise InvalidDistribution("entries must be nonnegative and sum to 1")
    return p


def entropy_score(p):
    """Shannon entropy (natural log) with ``0 log 0 = 0``."""
    p = _check_proba(p)
    return entr(p).sum(axis=-1)


def least_confident_score(p):
    """Negated probability of the most probable class."""
    p = _check_proba(p)
    return -p.max(axis=-1)


def vote_entropy_score(votes, n_classes=None, weights=None):
    """Entropy of the committee's hard-vote distribution.

    ``votes`` holds one class index per member, shape ``(C,)`` or ``(C, n)``.
    With ``weights`` (e.g. boosting weights) each vote counts by its weight
    and ``C`` becomes the weight total.
    """
    votes = np.asarray(votes, dtype=np.int64)
    single = votes.ndim == 1
    if single:
        votes = votes[:, None]
    C = votes.shape[0]
    if C < 2:
        raise CommitteeTooSmall(f"need at least 2 committee members, got {C}")
    if n_classes is None:
        n_classes = int(votes.max()) + 1
    w = np.ones(C) if weights is None else np.asarray(weights, dtype=np.float64)
    counts = np.zeros((votes.shape[1], n_classes))
    for c in range(C):
        counts[np.arange(votes.shape[1]), votes[c]] += w[c]
    scores = entr(counts / w.sum()).sum(axis=1)
    return scores[0] if single else scores


def mean_kl_score(member_probas):
    """Mean KL divergence of each member from the committee average.

    ``member_probas`` has shape ``(C, K)`` or ``(C, n, K)``. Probabilities
    are floored at ``KL_FLOOR`` inside the logarithms; terms whose member
    probability is exactly zero contribute nothing.
    """
    P = np.asarray(member_probas, dtype=np.float64)
    single = P.ndim == 2
    if single:
        P = P[:, None, :]
    if P.shape[0] < 2:
        raise CommitteeTooSmall(f"need at least 2 committee members, got {P.shape[0]}")
    _check_proba(P.reshape(-1, P.shape[-1]))
    mean = P.mean(axis=0)
    log_ratio = np.log(np.maximum(P, KL_FLOOR)) - np.log(np.maximum(mean, KL_FLOOR))
    kl = np.where(P > 0, P * log_ratio, 0.0).sum(axis=-1)
    # the committee average can round away from identical members
    unanimous = np.all(P == P[:1], axis=(0, 2))
    scores = np.where(unanimous, 0.0, np.maximum(kl.mean(axis=0), 0.0))
    return scores[0] if single else scores


def egl_score(model, X, proba=None):
    """Expected gradient length, ``sum_k p_k(x) ||grad loss(x, k)||``.

    Uses the single-example gradient approximation (no retraining). ``proba``
    replaces the label weights, e.g. with a post-processed distribution.
    """
    single = np.ndim(X) == 1
    norms = model.gradient_norms(np.atleast_2d(X))
    weights = model.predict_proba(np.atleast_2d(X)) if proba is None else np.atleast_2d(proba)
    scores = (weights * norms).sum(axis=1)
    return scores[0] if single else scores


def eer_score(model, X_candidates, X_sample, X_train, y_train, n_steps=20,
              adapt: Callable | None = None, s_candidates=None, s_sample=None):
    """Negated expected residual error after adding each candidate.

    For every candidate ``x`` and hypothetical label ``k`` the model is
    warm-started on ``train + (x, k)`` for ``n_steps`` gradient steps; the
    residual error of that model on ``X_sample`` is ``sum_u 1 - max_v p_u(v)``
    and is averaged over ``k`` with weights ``p_k(x)``.

    ``adapt(P, s)`` optionally maps probability matrices before use (fair
    post-processing); it then needs the sensitive values of both sets.
    """
    if not hasattr(model, "warm_start"):
        raise GradientUnsupported(f"{model.kind} cannot be warm-started for expected error reduction")
    Xc = np.atleast_2d(np.asarray(X_candidates, dtype=np.float64))
    Xs = np.asarray(X_sample, dtype=np.float64).reshape(-1, Xc.shape[1])
    scores = np.zeros(Xc.shape[0])
    if Xs.shape[0] == 0:
        return scores
    P = model.predict_proba(Xc)
    if adapt is not None:
        P = adapt(P, s_candidates)
    y_train = np.asarray(y_train, dtype=np.int64)
    for i, x in enumerate(Xc):
        X_aug = np.vstack([X_train, x])
        expected = 0.0
        for k in range(model.n_classes):
            if P[i, k] == 0.0:
                continue
            retrained = model.warm_start(X_aug, np.append(y_train, k), n_steps)
            Q = retrained.predict_proba(Xs)
            if adapt is not None:
                Q = adapt(Q, s_sample)
            expected += P[i, k] * (1.0 - Q.max(axis=1)).sum()
        scores[i] = -expected
    return scores


def _unit_rows(X):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    # all-zero vectors get similarity 0 with everything
    return np.divide(X, norms, out=np.zeros_like(X), where=norms > 0)


def representativeness(X, X_pool, similarity="cosine"):
    """Mean cosine similarity of each row of ``X`` to the pool."""
    if similarity != "cosine":
        raise ValueError(f"unsupported similarity {similarity!r}")
    X_pool = np.atleast_2d(np.asarray(X_pool, dtype=np.float64))
    if X_pool.shape[0] == 0:
        raise EmptyPool("representativeness needs a nonempty pool")
    centroid = _unit_rows(X_pool).mean(axis=0)
    return _unit_rows(X) @ centroid


def information_density_score(base_score, X, X_pool, beta=1.0, similarity="cosine"):
    """Density-weighted score ``base * I_R(x) ** beta``.

    ``I_R`` is floored at 0 before the power so that fractional ``beta``
    stays real; ``beta = 0`` returns ``base_score`` unchanged.
    """
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    if X_pool is None or np.size(X_pool) == 0:
        raise EmptyPool("information density needs a nonempty pool")
    if beta == 0:
        return base_score
    rep = np.maximum(representativeness(X, X_pool, similarity), 0.0)
    if np.ndim(X) == 1:
        rep = rep[0]
    return np.asarray(base_score, dtype=np.float64) * rep ** beta


@dataclass
class ScoredPool:
    """Scores for a set of pool positions (not necessarily the whole pool)."""

    indices: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.indices.shape != self.scores.shape:
            raise ValueError("one score per pool index is required")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("scores must be finite")

    def __len__(self):
        return len(self.indices)


def select_batch(scored: ScoredPool, b: int) -> np.ndarray:
    """Top-``b`` pool indices by score, ties to the lowest index."""
    if b < 1:
        raise ValueError("batch size must be at least 1")
    if b > len(scored):
        raise BatchExceedsPool(f"batch of {b} from {len(scored)} candidates")
    order = np.lexsort((scored.indices, -scored.scores))
    return scored.indices[order[:b]]


@dataclass
class PoolContext:
    """Everything a strategy may look at when scoring the current pool.

    ``adapt(P, s)`` maps raw probability matrices to the distributions the
    strategy should consume; ``None`` means use them as they are.
    """

    model: object
    model_config: ModelConfig
    X_pool: np.ndarray
    pool_indices: np.ndarray
    X_train: np.ndarray
    y_train: np.ndarray
    n_classes: int
    s_pool: np.ndarray | None = None
    adapt: Callable | None = None

    def proba(self, rows=None):
        X = self.X_pool if rows is None else self.X_pool[rows]
        P = self.model.predict_proba(X)
        return self._adapt(P, rows)

    def _adapt(self, P, rows=None):
        if self.adapt is None:
            return P
        s = None
        if self.s_pool is not None:
            s = self.s_pool if rows is None else self.s_pool[rows]
        return self.adapt(P, s)


@dataclass
class QueryStrategy:
    """A named importance score plus its parameters.

    ``candidate_size`` restricts scoring to a random pool subsample (EER
    always subsamples to at least ``eer_sample_size`` candidates).
    """

    kind: str = "entropy"
    committee_size: int = 8
    beta: float = 1.0
    similarity: str = "cosine"
    eer_sample_size: int = 50
    eer_steps: int = 20
    density_base: str = "entropy"
    candidate_size: int | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"unknown strategy {self.kind!r}; expected one of {STRATEGY_KINDS}")
        if self.kind.startswith(("qbag", "qboost")) and self.committee_size < 2:
            raise CommitteeTooSmall("committee strategies need committee_size >= 2")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.eer_sample_size < 1:
            raise ValueError("eer_sample_size must be at least 1")
        if self.density_base not in ("entropy", "least_confident"):
            raise ValueError("density_base must be 'entropy' or 'least_confident'")

    def score(self, ctx: PoolContext, rng: np.random.Generator, min_candidates: int = 1) -> ScoredPool:
        n_pool = ctx.X_pool.shape[0]
        if n_pool == 0:
            raise EmptyPool("nothing left to score")
        size = self.candidate_size
        if self.kind == "eer":
            size = self.eer_sample_size if size is None else size
        rows = np.arange(n_pool)
        if size is not None and size < n_pool:
            size = max(size, min_candidates)
            rows = np.sort(rng.choice(n_pool, size=min(size, n_pool), replace=False))
        scores = self._score_rows(ctx, rows, rng)
        return ScoredPool(ctx.pool_indices[rows], scores)

    def _score_rows(self, ctx, rows, rng):
        kind = self.kind
        X = ctx.X_pool[rows]
        if kind == "random":
            return rng.random(len(rows))
        if kind == "least_confident":
            return least_confident_score(ctx.proba(rows))
        if kind == "entropy":
            return entropy_score(ctx.proba(rows))
        if kind == "information_density":
            P = ctx.proba(rows)
            base = entropy_score(P) if self.density_base == "entropy" else least_confident_score(P)
            return information_density_score(base, X, ctx.X_pool, self.beta, self.similarity)
        if kind in ("qbag_vote_entropy", "qbag_mean_kl"):
            member_P = self._bagging_committee(ctx, X, rng)
            member_P = np.stack([ctx._adapt(P, rows) for P in member_P])
            if kind == "qbag_mean_kl":
                return mean_kl_score(member_P)
            return vote_entropy_score(member_P.argmax(axis=2), ctx.n_classes)
        if kind == "qboost_vote_entropy":
            booster = BoostedStumps(ModelConfig(kind="boosted_stumps", n_rounds=self.committee_size))
            booster.fit(ctx.X_train, ctx.y_train, ctx.n_classes)
            if len(booster.estimators_) < 2:
                # boosting stopped after one round: the committee is unanimous
                return np.zeros(len(rows))
            votes, alphas = booster.member_votes(X)
            return vote_entropy_score(votes, ctx.n_classes, weights=alphas)
        if kind == "egl":
            return egl_score(ctx.model, X, proba=ctx.proba(rows))
        if kind == "eer":
            m = min(self.eer_sample_size, ctx.X_pool.shape[0])
            sample = np.sort(rng.choice(ctx.X_pool.shape[0], size=m, replace=False))
            s_pool = ctx.s_pool
            return eer_score(
                ctx.model, X, ctx.X_pool[sample], ctx.X_train, ctx.y_train, self.eer_steps,
                adapt=ctx.adapt,
                s_candidates=None if s_pool is None else s_pool[rows],
                s_sample=None if s_pool is None else s_pool[sample],
            )
        raise AssertionError(kind)

    def _bagging_committee(self, ctx, X, rng):
        n = ctx.X_train.shape[0]
        out = []
        for _ in range(self.committee_size):
            boot = rng.integers(0, n, size=n)
            member = fit_arrays(ctx.model_config, ctx.X_train[boot], ctx.y_train[boot],
                                ctx.n_classes, seed=int(rng.integers(2**31)))
            out.append(member.predict_proba(X))
        return np.stack(out)
