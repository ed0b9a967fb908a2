"""
Evaluation metrics: AUC, log loss, MSE, gains relative to a reference
model and trend statistics over a lambda sweep.
"""

from typing import Optional, Sequence

import numpy as np
from scipy import stats

from app.exceptions import InputError, UndefinedMetricError
from app.losses import bce_loss


def auc(y, scores) -> float:
    """
    Area under the ROC curve via the Mann-Whitney U statistic: the
    probability that a random positive outranks a random negative, with
    ties counted as one half (midranks).
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    scores = np.asarray(scores, dtype=np.float64).ravel()
    if y.shape != scores.shape:
        raise InputError(f"y and scores differ in length: {y.shape[0]} vs {scores.shape[0]}")
    positives = y == 1.0
    n_pos = int(positives.sum())
    n_neg = y.shape[0] - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both positive and negative examples")

    ranks = stats.rankdata(scores, method="average")
    u_statistic = ranks[positives].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u_statistic / (n_pos * n_neg))


def auc_pairwise(y, scores) -> float:
    """O(n^2) pair-counting AUC; reference implementation for tests"""
    y = np.asarray(y).ravel()
    scores = np.asarray(scores, dtype=np.float64).ravel()
    pos = scores[y == 1]
    neg = scores[y != 1]
    if pos.size == 0 or neg.size == 0:
        raise UndefinedMetricError("AUC needs both positive and negative examples")
    greater = (pos[:, None] > neg[None, :]).sum()
    ties = (pos[:, None] == neg[None, :]).sum()
    return float((greater + 0.5 * ties) / (pos.size * neg.size))


def log_loss(y, y_hat) -> float:
    """Mean binary cross entropy, probabilities clamped away from 0 and 1"""
    return bce_loss(y, y_hat).value


def mse(target, estimate) -> float:
    target = np.asarray(target, dtype=np.float64).ravel()
    estimate = np.asarray(estimate, dtype=np.float64).ravel()
    if target.shape != estimate.shape:
        raise InputError("target and estimate differ in length")
    if target.size == 0:
        raise InputError("Empty batch")
    return float(np.mean((target - estimate) ** 2))


def relative_auc_gain(auc_model: float, auc_ref: float) -> float:
    """Relative gain in percent: 100 * (model - ref) / ref"""
    if auc_ref == 0:
        raise InputError("Reference AUC must be non-zero")
    return 100.0 * (auc_model - auc_ref) / auc_ref


def absolute_auc_diff(auc_model: float, auc_ref: float) -> float:
    """Absolute difference in percentage points: 100 * (model - ref)"""
    return 100.0 * (auc_model - auc_ref)


# ============================================================================
# Trend statistics over a sweep
# ============================================================================

def spearman(x: Sequence[float], y: Sequence[float]) -> Optional[float]:
    """Spearman rank correlation, None when undefined (constant input, < 3 points)"""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    mask = np.isfinite(x) & np.isfinite(y)
    x, y = x[mask], y[mask]
    if x.size < 3 or np.all(x == x[0]) or np.all(y == y[0]):
        return None
    rho = stats.spearmanr(x, y).statistic
    return None if not np.isfinite(rho) else float(rho)


def sign_test(differences: Sequence[float], alternative: str = "greater") -> Optional[float]:
    """
    One-sided sign test p-value on paired differences (zeros dropped).
    alternative="greater" tests whether differences tend to be positive.
    """
    d = np.asarray(differences, dtype=np.float64)
    d = d[np.isfinite(d) & (d != 0.0)]
    if d.size == 0:
        return None
    positives = int((d > 0).sum())
    return float(stats.binomtest(positives, d.size, 0.5, alternative=alternative).pvalue)
