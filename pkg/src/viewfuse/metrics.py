"""Binary classification metrics: ROC, PR, bootstrap intervals.

AUC here is exact: curve points accumulate integer TP/FP counts per
distinct threshold, and the trapezoid sum is carried as an integer
numerator over 2*P*N. That makes the result bitwise equal to the
Mann-Whitney pair-counting definition (ties credit 0.5), not merely
close to it.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "accuracy",
    "roc_curve",
    "roc_auc",
    "pr_curve",
    "pr_auc",
    "bootstrap_ci",
]


def _validate(labels, scores) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(labels)
    s = np.asarray(scores, dtype=np.float64)
    if y.ndim != 1 or s.ndim != 1:
        raise ValueError("labels and scores must be 1-d")
    if y.shape[0] != s.shape[0]:
        raise ValueError(f"length mismatch: {y.shape[0]} labels vs {s.shape[0]} scores")
    if y.shape[0] == 0:
        raise ValueError("empty inputs")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    if not np.isfinite(s).all():
        raise ValueError("scores must be finite")
    return y.astype(np.int64), s


def accuracy(labels, predictions) -> float:
    y = np.asarray(labels)
    p = np.asarray(predictions)
    if y.shape != p.shape or y.ndim != 1:
        raise ValueError("labels and predictions must be 1-d and the same length")
    if y.shape[0] == 0:
        raise ValueError("empty inputs")
    return float(np.mean(y == p))


def roc_curve(labels, scores) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (fpr, tpr, thresholds), one point per distinct score.

    Scores descend; tied scores collapse into a single point so the
    curve, and therefore the trapezoid area, handles ties exactly.
    Starts at (0, 0) with threshold +inf.
    """
    y, s = _validate(labels, scores)
    p = int(y.sum())
    n = int(y.shape[0] - p)
    if p == 0 or n == 0:
        raise ValueError("ROC needs both classes present")
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    # Last index of each tie group.
    distinct = np.nonzero(np.diff(s_sorted))[0]
    last = np.concatenate([distinct, [y_sorted.shape[0] - 1]])
    tp = np.cumsum(y_sorted)[last]
    fp = (last + 1) - tp
    tpr = np.concatenate([[0.0], tp / p])
    fpr = np.concatenate([[0.0], fp / n])
    thresholds = np.concatenate([[np.inf], s_sorted[last]])
    return fpr, tpr, thresholds


def roc_auc(labels, scores) -> float:
    """Exact area under the ROC curve.

    Integer trapezoid numerator: sum of (fp_i - fp_{i-1}) * (tp_i + tp_{i-1})
    over consecutive curve points, divided by 2*P*N once at the end.
    """
    y, s = _validate(labels, scores)
    p = int(y.sum())
    n = int(y.shape[0] - p)
    if p == 0 or n == 0:
        raise ValueError("ROC AUC needs both classes present")
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    distinct = np.nonzero(np.diff(s_sorted))[0]
    last = np.concatenate([distinct, [y_sorted.shape[0] - 1]])
    tp = np.concatenate([[0], np.cumsum(y_sorted)[last]])
    fp = np.concatenate([[0], (last + 1) - np.cumsum(y_sorted)[last]])
    num = int(np.sum((fp[1:] - fp[:-1]) * (tp[1:] + tp[:-1])))
    return num / (2 * p * n)


def pr_curve(labels, scores) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (recall, precision, thresholds), one point per distinct score.

    Recall ascends from 0; the leading point is (0, 1) by convention.
    """
    y, s = _validate(labels, scores)
    p = int(y.sum())
    if p == 0:
        raise ValueError("PR curve needs at least one positive")
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    distinct = np.nonzero(np.diff(s_sorted))[0]
    last = np.concatenate([distinct, [y_sorted.shape[0] - 1]])
    tp = np.cumsum(y_sorted)[last]
    predicted = last + 1
    recall = np.concatenate([[0.0], tp / p])
    precision = np.concatenate([[1.0], tp / predicted])
    thresholds = np.concatenate([[np.inf], s_sorted[last]])
    return recall, precision, thresholds


def pr_auc(labels, scores) -> float:
    """Step-wise area under the PR curve: sum (r_i - r_{i-1}) * p_i."""
    recall, precision, _ = pr_curve(labels, scores)
    return float(np.sum((recall[1:] - recall[:-1]) * precision[1:]))


def bootstrap_ci(
    labels,
    scores,
    metric,
    n_boot: int = 2000,
    alpha: float = 0.05,
    seed: int = 0,
) -> tuple[float, float, float]:
    """Percentile bootstrap interval for a (labels, scores) -> float metric.

    Returns (point, lower, upper). Resamples that lose one of the classes
    are redrawn, so class-sensitive metrics like AUC stay defined.
    """
    y, s = _validate(labels, scores)
    if not 0 < alpha < 1:
        raise ValueError("alpha must be in (0, 1)")
    if n_boot < 1:
        raise ValueError("n_boot must be positive")
    if y.min() == y.max():
        raise ValueError("bootstrap needs both classes present")
    point = float(metric(y, s))
    rng = np.random.default_rng(seed)
    n = y.shape[0]
    stats = np.empty(n_boot, dtype=np.float64)
    for b in range(n_boot):
        while True:
            idx = rng.integers(0, n, size=n)
            yb = y[idx]
            if 0 < yb.sum() < n:
                break
        stats[b] = metric(yb, s[idx])
    lower = float(np.quantile(stats, alpha / 2))
    upper = float(np.quantile(stats, 1 - alpha / 2))
    return point, lower, upper
