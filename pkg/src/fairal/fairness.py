"""Demographic-parity post-processing and unfairness measures.

The plug-in fair classifier rescores a base model's class probabilities as

    fair_k(x, s) = pi_s * (p_k(x, s) + zeta_k) - s * lambda_k

and predicts ``argmax_k fair_k``. ``pi_s`` are the group frequencies on the
unlabeled pool, ``zeta`` is a tiny uniform jitter that breaks ties, and
``lambda`` minimizes a convex piecewise-linear objective over the pool whose
subgradient is exactly the (signed) demographic-parity gap of the fair
predictor. Sensitive values are ``-1`` / ``+1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import math

import numpy as np
from scipy.special import logsumexp, softmax

from .errors import (
    DegenerateGroup,
    InvalidDistribution,
    LengthMismatch,
    MissingSensitive,
    NoCorrectPredictions,
    NonFiniteObjective,
)

__all__ = [
    "GROUPS",
    "FairPostProcessor",
    "estimate_group_frequencies",
    "group_frequency",
    "draw_jitter",
    "shifted_group_scores",
    "lambda_objective",
    "optimize_lambda",
    "fair_scores",
    "fair_distribution",
    "project_to_simplex",
    "fair_predict",
    "dp_unfairness",
    "correct_rate_unfairness",
]

GROUPS = (-1, 1)
DEFAULT_JITTER = 1e-5


def estimate_group_frequencies(sensitive):
    """Empirical ``(pi_-1, pi_+1)`` of the sensitive attribute.

    Accepts a vector of ``-1/+1`` values or a dataset carrying ``s``.
    """
    if hasattr(sensitive, "has_sensitive"):
        if not sensitive.has_sensitive:
            raise MissingSensitive("dataset has no sensitive attribute")
        sensitive = sensitive.s
    if sensitive is None:
        raise MissingSensitive("no sensitive values given")
    s = np.asarray(sensitive)
    if s.size == 0:
        raise DegenerateGroup("empty pool")
    n_plus = int((s == 1).sum())
    n_minus = int((s == -1).sum())
    if n_plus + n_minus != s.size:
        raise MissingSensitive("sensitive values must all be -1 or +1")
    if n_plus == 0 or n_minus == 0:
        raise DegenerateGroup("both sensitive groups must be present")
    return (n_minus / s.size, n_plus / s.size)


def group_frequency(pi_hat, s):
    """``pi_s`` for each entry of ``s``."""
    return np.where(np.asarray(s) == 1, pi_hat[1], pi_hat[0])


def draw_jitter(rng, shape, jitter_u):
    """Uniform jitter on ``[0, jitter_u)``; zeros when ``jitter_u == 0``."""
    if jitter_u == 0:
        return np.zeros(shape)
    return jitter_u * rng.random(shape)


def _check_group_scores(scores):
    out = {}
    for s in GROUPS:
        P = np.asarray(scores.get(s, np.empty((0, 0))), dtype=np.float64)
        if P.ndim != 2 or P.shape[0] == 0:
            raise DegenerateGroup(f"group {s:+d} has no calibration instances")
        out[s] = P
    if out[-1].shape[1] != out[1].shape[1]:
        raise ValueError("both groups must have the same number of classes")
    return out


def shifted_group_scores(scores, pi_hat, jitter_u=DEFAULT_JITTER, rng=None):
    """``pi_s * (p + zeta)`` per group, with the jitter drawn once and frozen."""
    scores = _check_group_scores(scores)
    rng = np.random.default_rng(rng)
    return {s: pi_hat[(s + 1) // 2] * (scores[s] + draw_jitter(rng, scores[s].shape, jitter_u))
            for s in GROUPS}


def _stack(shifted):
    A = np.vstack([shifted[s] for s in GROUPS])
    sign = np.concatenate([np.full(len(shifted[s]), float(s)) for s in GROUPS])
    weight = np.concatenate([np.full(len(shifted[s]), 1.0 / len(shifted[s])) for s in GROUPS])
    # two classes: work on score differences, ties go to class 0 like argmax
    diff = A[:, 0] - A[:, 1] if A.shape[1] == 2 else None
    return A, sign, weight, diff


def _value_and_subgradient(lam, stacked):
    A, sign, weight, diff = stacked
    if diff is not None:
        margin = diff - sign * (lam[0] - lam[1])
        first = margin >= 0
        value = weight @ (A[:, 1] - sign * lam[1] + np.maximum(margin, 0.0))
        sw = sign * weight
        g0 = -sw[first].sum()
        return value, np.array([g0, -sw.sum() - g0])
    M = A - sign[:, None] * lam
    idx = M.argmax(axis=1)
    value = weight @ M[np.arange(M.shape[0]), idx]
    grad = np.bincount(idx, weights=-sign * weight, minlength=lam.size)
    return value, grad


def lambda_objective(lam, shifted):
    """``sum_s mean_i max_k (shifted_s[i, k] - s * lam_k)``."""
    return _value_and_subgradient(np.asarray(lam, dtype=np.float64), _stack(shifted))[0]


def _subgradient_descent(shifted, K, n_iterations, step0, n_restarts):
    stacked = _stack(shifted)
    best = np.zeros(K)
    best_val, _ = _value_and_subgradient(best, stacked)
    per_phase = max(1, n_iterations // max(1, n_restarts))
    eta0 = step0
    for _ in range(max(1, n_restarts)):
        lam = best.copy()
        grad = _value_and_subgradient(lam, stacked)[1]
        # the subgradient sums to zero, so steps never leave the centered plane
        for step in eta0 / np.sqrt(np.arange(1, per_phase + 1)):
            if not grad.any():
                return best
            lam = lam - step * grad
            val, grad = _value_and_subgradient(lam, stacked)
            if not math.isfinite(val):
                raise NonFiniteObjective("objective became non-finite")
            if val < best_val:
                best_val, best = val, lam.copy()
        eta0 *= 0.5
    return best


def _smoothed_descent(shifted, K, n_iterations, temperature):
    # Nesterov's accelerated gradient on the log-sum-exp smoothing
    T = temperature
    step = T / (2.0 * len(shifted))

    def grad(lam):
        g = np.zeros(K)
        for s, A in shifted.items():
            g -= s * softmax((A - s * lam) / T, axis=1).mean(axis=0)
        return g

    def smooth_value(lam):
        return sum(T * logsumexp((A - s * lam) / T, axis=1).mean() for s, A in shifted.items())

    lam = np.zeros(K)
    y = lam.copy()
    for t in range(1, n_iterations + 1):
        nxt = y - step * grad(y)
        nxt -= nxt.mean()
        y = nxt + (t - 1.0) / (t + 2.0) * (nxt - lam)
        lam = nxt
    if not np.isfinite(smooth_value(lam)):
        raise NonFiniteObjective("smoothed objective became non-finite")
    if lambda_objective(lam, shifted) > lambda_objective(np.zeros(K), shifted):
        return np.zeros(K)
    return lam


def optimize_lambda(scores, pi_hat, jitter_u=DEFAULT_JITTER, seed=0, method="subgradient",
                    n_iterations=2000, step0=1.0, n_restarts=8, temperature=1e-3,
                    return_shifted=False):
    """Calibrate the dual vector on per-group pool probabilities.

    Parameters
    ----------
    scores : dict
        ``{-1: (N_-1, K) array, +1: (N_+1, K) array}`` of base-model
        probabilities on the pool, split by group.
    pi_hat : tuple
        ``(pi_-1, pi_+1)``.
    jitter_u : float
        Upper bound of the jitter, drawn once per (instance, class) from
        ``seed`` and kept fixed during the optimization.
    method : {"subgradient", "smoothed"}
        ``"subgradient"`` runs subgradient descent with steps
        ``step0 / sqrt(t)``, tracking the best iterate; the budget is split
        into ``n_restarts`` phases, each restarting from the best point with
        half the previous ``step0``. ``"smoothed"`` runs accelerated gradient
        descent on a log-sum-exp smoothing at ``temperature``.

    Returns
    -------
    numpy.ndarray
        Centered ``lambda`` (components sum to zero); with
        ``return_shifted`` also the frozen ``pi_s * (p + zeta)`` matrices.
    """
    shifted = shifted_group_scores(scores, pi_hat, jitter_u, np.random.default_rng([seed, 0]))
    for A in shifted.values():
        if not np.all(np.isfinite(A)):
            raise NonFiniteObjective("calibration scores contain NaN or Inf")
    K = shifted[1].shape[1]
    if method == "subgradient":
        lam = _subgradient_descent(shifted, K, n_iterations, step0, n_restarts)
    elif method == "smoothed":
        lam = _smoothed_descent(shifted, K, n_iterations, temperature)
    else:
        raise ValueError(f"unknown method {method!r}")
    lam = lam - lam.mean()
    return (lam, shifted) if return_shifted else lam


def _check_rows(P):
    P = np.asarray(P, dtype=np.float64)
    if np.any(P < 0) or np.any(np.abs(P.sum(axis=-1) - 1.0) > 1e-6):
        raise InvalidDistribution("base probabilities must be nonnegative and sum to 1")
    return P


def fair_scores(p, s, pi_hat, lambda_hat, zeta=None):
    """Fair scores for one probability vector ``(K,)`` or a matrix ``(n, K)``."""
    p = _check_rows(p)
    lam = np.asarray(lambda_hat, dtype=np.float64)
    zeta = np.zeros_like(p) if zeta is None else np.asarray(zeta, dtype=np.float64)
    s = np.asarray(s)
    pi_s = group_frequency(pi_hat, s)
    if p.ndim == 2:
        return pi_s[:, None] * (p + zeta) - s[:, None] * lam
    return pi_s * (p + zeta) - s * lam


def project_to_simplex(G):
    """Euclidean projection of each row onto the probability simplex.

    Rows already on the simplex (to 1e-12) are returned untouched.
    """
    G = np.atleast_2d(np.asarray(G, dtype=np.float64))
    n, K = G.shape
    U = -np.sort(-G, axis=1)
    css = np.cumsum(U, axis=1) - 1.0
    ratio = css / np.arange(1, K + 1)
    cond = U - ratio > 0
    rho = K - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = ratio[np.arange(n), rho]
    Q = np.maximum(G - theta[:, None], 0.0)
    feasible = np.all(G >= 0, axis=1) & (np.abs(G.sum(axis=1) - 1.0) <= 1e-12)
    Q[feasible] = G[feasible]
    return Q


def fair_distribution(P, s, pi_hat, lambda_hat, zeta=None):
    """Probability vectors whose argmax is the fair prediction.

    The fair scores divided by ``pi_s`` are ``p + zeta - s * lambda / pi_s``,
    which sum to ``1 + sum(zeta)`` for centered ``lambda``; they are projected
    onto the simplex. With ``lambda = 0`` and no jitter this returns ``P``
    itself, bit for bit.
    """
    P = np.atleast_2d(_check_rows(P))
    s = np.asarray(s)
    lam = np.asarray(lambda_hat, dtype=np.float64)
    pi_s = group_frequency(pi_hat, s)[:, None]
    G = P if zeta is None else P + zeta
    G = G - (s[:, None] * lam) / pi_s
    return project_to_simplex(G)


@dataclass
class FairPostProcessor:
    """A calibrated demographic-parity post-processor.

    Immutable after calibration except for the jitter stream used by
    :meth:`predict`, which is seeded from ``seed``: predictions are
    reproducible for a fixed serial order of calls.
    """

    pi_hat: tuple
    lambda_hat: np.ndarray
    jitter_u: float = DEFAULT_JITTER
    seed: int = 0
    calibration_pool_size: int = 0
    _rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        self.lambda_hat = np.asarray(self.lambda_hat, dtype=np.float64)
        if not np.all(np.isfinite(self.lambda_hat)):
            raise NonFiniteObjective("lambda_hat must be finite")
        if self.jitter_u < 0:
            raise ValueError("jitter_u must be nonnegative")
        if not (0 < self.pi_hat[0] < 1 and abs(self.pi_hat[0] + self.pi_hat[1] - 1) < 1e-12):
            raise DegenerateGroup(f"invalid group frequencies {self.pi_hat}")
        self._rng = np.random.default_rng([self.seed, 1])

    @classmethod
    def calibrate(cls, P_pool, s_pool, jitter_u=DEFAULT_JITTER, seed=0, **optimizer):
        """Estimate group frequencies and the dual vector on pool probabilities."""
        s_pool = np.asarray(s_pool)
        pi_hat = estimate_group_frequencies(s_pool)
        P_pool = _check_rows(P_pool)
        groups = {s: P_pool[s_pool == s] for s in GROUPS}
        lam = optimize_lambda(groups, pi_hat, jitter_u, seed, **optimizer)
        return cls(pi_hat=pi_hat, lambda_hat=lam, jitter_u=jitter_u, seed=seed,
                   calibration_pool_size=len(s_pool))

    @classmethod
    def identity(cls, s_pool, n_classes, seed=0):
        """Zero dual vector and no jitter: the fair model equals the base model."""
        return cls(pi_hat=estimate_group_frequencies(s_pool), lambda_hat=np.zeros(n_classes),
                   jitter_u=0.0, seed=seed, calibration_pool_size=len(s_pool))

    def _jitter(self, shape):
        return draw_jitter(self._rng, shape, self.jitter_u)

    def scores(self, P, s):
        P = np.atleast_2d(P)
        return fair_scores(P, np.atleast_1d(s), self.pi_hat, self.lambda_hat, self._jitter(P.shape))

    def predict(self, P, s):
        return self.scores(P, s).argmax(axis=1)

    def adapt(self, P, s):
        """Fair probability vectors for strategies that consume distributions."""
        P = np.atleast_2d(P)
        zeta = self._jitter(P.shape) if self.jitter_u > 0 else None
        return fair_distribution(P, np.atleast_1d(s), self.pi_hat, self.lambda_hat, zeta)


def fair_predict(model, post: FairPostProcessor, x, s):
    """Fair class for a single instance or a batch."""
    single = np.ndim(x) == 1
    out = post.predict(model.predict_proba(np.atleast_2d(x)), s)
    return int(out[0]) if single else out


# ---------------------------------------------------------------------------
# Unfairness measures
# ---------------------------------------------------------------------------

def _split_groups(predictions, sensitive):
    pred = np.asarray(predictions)
    s = np.asarray(sensitive)
    if pred.shape != s.shape:
        raise LengthMismatch("predictions and sensitive values differ in length")
    if not (np.any(s == -1) and np.any(s == 1)):
        raise DegenerateGroup("both sensitive groups must be present")
    return pred, s


def dp_unfairness(predictions, sensitive, n_classes=None):
    """Largest per-class gap between the groups' prediction rates."""
    pred, s = _split_groups(predictions, sensitive)
    K = int(pred.max()) + 1 if n_classes is None else n_classes
    rates = [np.bincount(pred[s == g], minlength=K) / np.count_nonzero(s == g) for g in GROUPS]
    return float(np.abs(rates[0] - rates[1]).max())


def correct_rate_unfairness(predictions, labels, sensitive):
    """Largest gap between the groups' shares of correct predictions per class.

    For each class ``y`` with at least one correct prediction, the share of
    those correct predictions coming from each group is compared; classes
    without correct predictions are skipped.
    """
    pred, s = np.asarray(predictions), np.asarray(sensitive)
    labels = np.asarray(labels)
    if not (pred.shape == labels.shape == s.shape):
        raise LengthMismatch("predictions, labels and sensitive values differ in length")
    correct = pred == labels
    gaps = []
    for y in np.unique(labels[correct]):
        hit = correct & (labels == y)
        total = hit.sum()
        gaps.append(abs(int((hit & (s == -1)).sum()) - int((hit & (s == 1)).sum())) / total)
    if not gaps:
        raise NoCorrectPredictions("no class has a correct prediction")
    return float(max(gaps))
