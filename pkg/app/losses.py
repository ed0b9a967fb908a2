"""
Loss functions for adversarial training

Each loss returns its value together with the analytic gradient w.r.t.
the prediction vector(s) it depends on. Batch statistics (means,
covariance) are always computed over the minibatch that is passed in.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from app.exceptions import ConfigurationError, InputError

PROB_EPS = 1e-12


@dataclass(frozen=True)
class LossValue:
    """Loss value plus gradients w.r.t. y_hat and/or b_hat (1-D, batch length)"""
    value: float
    grad_y_hat: Optional[np.ndarray] = None
    grad_b_hat: Optional[np.ndarray] = None


def clamp_probabilities(p: np.ndarray) -> np.ndarray:
    """Keep probabilities inside [eps, 1 - eps] before taking logs"""
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS)


def _pair(a, b, name_a: str, name_b: str, min_n: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise InputError(f"{name_a} and {name_b} differ in length: {a.shape[0]} vs {b.shape[0]}")
    if a.shape[0] < min_n:
        if min_n == 1:
            raise InputError("Empty batch")
        raise InputError(f"Batch of size {a.shape[0]} is too small (need at least {min_n})")
    return a, b


def bce_loss(y, y_hat) -> LossValue:
    """Mean binary cross entropy of clicks y against predicted probabilities"""
    y, y_hat = _pair(y, y_hat, "y", "y_hat")
    n = y.shape[0]
    p = clamp_probabilities(y_hat)
    value = -np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    grad = (p - y) / (n * p * (1.0 - p))
    return LossValue(value=float(value), grad_y_hat=grad)


def bias_mse_loss(b, b_hat) -> LossValue:
    """Mean squared error of the Bias network's estimate of b"""
    b, b_hat = _pair(b, b_hat, "b", "b_hat")
    n = b.shape[0]
    diff = b_hat - b
    return LossValue(value=float(np.mean(diff * diff)), grad_b_hat=2.0 * diff / n)


def sq_cov_loss(b, b_hat) -> LossValue:
    """
    Squared Bessel-corrected sample covariance between b and b_hat.

    The gradient w.r.t. b_hat has no mean-of-b_hat term because the
    centred b sums to zero.
    """
    b, b_hat = _pair(b, b_hat, "b", "b_hat", min_n=2)
    n = b.shape[0]
    b_c = b - b.mean()
    cov = float(np.dot(b_c, b_hat - b_hat.mean()) / (n - 1))
    return LossValue(value=cov * cov, grad_b_hat=2.0 * cov * b_c / (n - 1))


def noisy_loss(y, y_hat, b, b_hat, lam: float) -> LossValue:
    """(1 - lam) * BCE(y, y_hat) + lam * Cov(b, b_hat)^2"""
    if not 0.0 <= lam <= 1.0:
        raise ConfigurationError(f"lambda must be in [0, 1], got {lam}")
    y = np.asarray(y, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if y.shape != b.shape:
        raise InputError("y and b must share the batch size")

    prediction = bce_loss(y, y_hat)
    covariance = sq_cov_loss(b, b_hat)
    return LossValue(
        value=(1.0 - lam) * prediction.value + lam * covariance.value,
        grad_y_hat=(1.0 - lam) * prediction.grad_y_hat,
        grad_b_hat=lam * covariance.grad_b_hat,
    )
