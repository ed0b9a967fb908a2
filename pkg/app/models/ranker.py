"""
L2-regularised logistic regression used as the day-by-day ranker M_i
of the feedback-loop simulation (and as the RUS upper-bound model).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from app.exceptions import TrainingError
from app.models.dataset import Dataset

logger = logging.getLogger(__name__)


class LogisticObjective:
    """
    Mean negative log-likelihood plus 0.5 * l2 * ||w||^2 / n.
    The intercept (last parameter) is not penalised.
    Callable as f(params) -> (value, gradient) for scipy.optimize.
    """

    def __init__(self, X: np.ndarray, y: np.ndarray, l2: float):
        self.X = X
        self.y = y
        self.l2 = l2
        self.n = X.shape[0]

    def __call__(self, params: np.ndarray):
        w, c = params[:-1], params[-1]
        z = self.X @ w + c
        loss = np.sum(np.logaddexp(0.0, z) - self.y * z) + 0.5 * self.l2 * np.dot(w, w)
        residual = expit(z) - self.y
        grad = np.empty_like(params)
        grad[:-1] = self.X.T @ residual + self.l2 * w
        grad[-1] = residual.sum()
        return loss / self.n, grad / self.n


@dataclass
class LogisticRanker:
    weights: np.ndarray
    intercept: float
    n_iter: int = 0
    converged: bool = True

    @classmethod
    def fit(
        cls,
        data: Dataset,
        *,
        l2: float = 1.0,
        max_iter: int = 1000,
        tol: float = 1e-6,
    ) -> "LogisticRanker":
        """
        Fit on the raw features only (never on b). Stops when the largest
        gradient component drops below `tol` or after `max_iter` iterations.
        """
        if len(data) == 0:
            raise TrainingError("Cannot fit a ranker on an empty dataset")
        classes = np.unique(data.y)
        if classes.shape[0] < 2:
            raise TrainingError(f"Ranker needs both classes, got only {classes.tolist()}")

        objective = LogisticObjective(data.X, data.y, l2)
        result = minimize(
            objective,
            np.zeros(data.n_features + 1),
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": max_iter, "gtol": tol},
        )
        if not np.all(np.isfinite(result.x)):
            raise TrainingError("Ranker fit produced non-finite weights")
        if not result.success:
            logger.warning(f"Ranker did not converge after {result.nit} iterations: {result.message}")

        return cls(
            weights=result.x[:-1].copy(),
            intercept=float(result.x[-1]),
            n_iter=int(result.nit),
            converged=bool(result.success),
        )

    def score(self, X: np.ndarray) -> np.ndarray:
        """Linear score; ranks identically to the click probability"""
        return np.asarray(X, dtype=np.float64) @ self.weights + self.intercept

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        return expit(self.score(X))
