"""Error metrics: plain misclassification and matched clustering error.

Clustering error relabels the predicted clusters by the permutation that
maximizes agreement with the truth, found exactly with the assignment
(Kuhn-Munkres) algorithm on the confusion matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

__all__ = ["EvalResult", "classification_error", "clustering_error"]


@dataclass(frozen=True)
class EvalResult:
    """Error rate with its confusion matrix.

    ``confusion[t-1, p-1]`` counts rows with truth t and prediction p.
    ``matching`` (clustering only) maps each predicted label to the truth
    label it was matched with; ``error_rate`` is then
    ``1 - trace(matched confusion) / n``.
    """

    error_rate: float
    confusion: np.ndarray
    matching: dict[int, int] | None = None
    per_fold: tuple[float, ...] | None = None

    def to_json_dict(self) -> dict:
        doc = {
            "error_rate": self.error_rate,
            "confusion": self.confusion.tolist(),
        }
        if self.matching is not None:
            doc["matching"] = {str(k): v for k, v in self.matching.items()}
        if self.per_fold is not None:
            doc["per_fold"] = list(self.per_fold)
        return doc


def _check_labels(truth, predicted, K: int | None = None):
    truth = np.asarray(truth, dtype=int)
    predicted = np.asarray(predicted, dtype=int)
    if truth.shape != predicted.shape or truth.ndim != 1:
        raise ValueError("truth and predicted must be equal-length label vectors")
    if truth.size == 0:
        raise ValueError("empty label vectors")
    if K is None:
        K = int(truth.max())
    if truth.min() < 1 or predicted.min() < 1 or truth.max() > K or predicted.max() > K:
        raise ValueError(f"labels must lie in 1..{K}")
    return truth, predicted, K


def _confusion(truth, predicted, K: int) -> np.ndarray:
    conf = np.zeros((K, K), dtype=int)
    np.add.at(conf, (truth - 1, predicted - 1), 1)
    return conf


def classification_error(truth, predicted) -> EvalResult:
    """Fraction of mismatched labels, with the K x K confusion matrix."""
    truth, predicted, K = _check_labels(truth, predicted)
    conf = _confusion(truth, predicted, K)
    err = 1.0 - np.trace(conf) / truth.size
    return EvalResult(error_rate=float(err), confusion=conf)


def clustering_error(truth, predicted, K: int | None = None) -> EvalResult:
    """Misclustering fraction under the best truth/cluster matching.

    Solves the assignment problem on the confusion matrix exactly, so the
    result is invariant to any relabeling of the predicted clusters.
    Predicted labels may use fewer than K values; the missing ones simply
    contribute zero rows.
    """
    truth, predicted, K = _check_labels(truth, predicted, K)
    conf = _confusion(truth, predicted, K)
    rows, cols = linear_sum_assignment(conf, maximize=True)
    matched = conf[rows, cols].sum()
    matching = {int(c + 1): int(t + 1) for t, c in zip(rows, cols)}
    err = 1.0 - matched / truth.size
    return EvalResult(error_rate=float(err), confusion=conf, matching=matching)
