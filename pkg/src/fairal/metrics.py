"""Predictive performance metrics and the per-iteration evaluation report."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import EmptyInput, LengthMismatch, NoCorrectPredictions
from .fairness import correct_rate_unfairness, dp_unfairness

__all__ = ["EvaluationReport", "accuracy", "f1_score", "evaluate"]


def _pair(predictions, labels):
    pred = np.asarray(predictions)
    labels = np.asarray(labels)
    if pred.size == 0 or labels.size == 0:
        raise EmptyInput("metrics need at least one prediction")
    if pred.shape != labels.shape:
        raise LengthMismatch(f"{pred.shape} predictions vs {labels.shape} labels")
    return pred, labels


def accuracy(predictions, labels) -> float:
    pred, labels = _pair(predictions, labels)
    return float(np.mean(pred == labels))


def _binary_f1(pred, labels, positive):
    tp = np.count_nonzero((pred == positive) & (labels == positive))
    predicted = np.count_nonzero(pred == positive)
    actual = np.count_nonzero(labels == positive)
    # empty denominators count as 0
    precision = tp / predicted if predicted else 0.0
    recall = tp / actual if actual else 0.0
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def f1_score(predictions, labels, averaging="binary", positive_class=1, n_classes=None) -> float:
    """F1 score, either for one positive class or macro-averaged one-vs-rest.

    ``averaging="macro"`` averages over ``range(n_classes)`` (default: every
    class seen in either argument).
    """
    pred, labels = _pair(predictions, labels)
    if averaging == "binary":
        return float(_binary_f1(pred, labels, positive_class))
    if averaging == "macro":
        if n_classes is None:
            classes = np.union1d(pred, labels)
        else:
            classes = np.arange(n_classes)
        return float(np.mean([_binary_f1(pred, labels, k) for k in classes]))
    raise ValueError(f"unknown averaging {averaging!r}")


@dataclass(frozen=True)
class EvaluationReport:
    iteration: int
    n_labeled: int
    accuracy: float
    f1: float
    unfairness_dp: float = float("nan")
    unfairness_rate: float = float("nan")

    def as_dict(self):
        return asdict(self)


def evaluate(predictions, labels, n_classes, iteration, n_labeled, sensitive=None) -> EvaluationReport:
    """Score one model on the test set.

    F1 is binary (positive class 1) when ``n_classes == 2`` and macro
    otherwise. Unfairness entries stay NaN without a sensitive attribute; the
    correct-rate variant is NaN when nothing is predicted correctly.
    """
    f1 = (f1_score(predictions, labels) if n_classes == 2
          else f1_score(predictions, labels, "macro", n_classes=n_classes))
    dp = rate = float("nan")
    if sensitive is not None:
        dp = dp_unfairness(predictions, sensitive, n_classes)
        try:
            rate = correct_rate_unfairness(predictions, labels, sensitive)
        except NoCorrectPredictions:
            pass
    return EvaluationReport(
        iteration=iteration,
        n_labeled=n_labeled,
        accuracy=accuracy(predictions, labels),
        f1=f1,
        unfairness_dp=dp,
        unfairness_rate=rate,
    )
