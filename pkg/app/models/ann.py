"""
Adversarial Neural Network (ANN) composite

Four sub-networks share one forward pass:

    Z_A   = base(X)                       (theta_A)
    s_Y   = prediction(Z_A)               (theta_Y; last layer is the W_Y / c head)
    s_BY  = bypass(b)                     (theta_BY; last layer is W_BY, no offset)
    y_hat = sigmoid(s_Y + s_BY)           (no_bypass: sigmoid(s_Y))
    b_hat = bias(Z_A)                     (theta_B)

The Bias network is the adversary: it reads only Z_A and tries to recover
the position CTR b. Inference ignores it entirely.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, List, Optional

import numpy as np
from scipy.special import expit

from app.exceptions import ConfigurationError, InputError
from app.models.network import (
    Activation,
    ForwardTrace,
    Network,
    ParamGrads,
    backward,
    forward,
    init_network,
)

if TYPE_CHECKING:
    from app.schemas import TrainConfig

logger = logging.getLogger(__name__)


class Variant(str, enum.Enum):
    """Whether b reaches the click prediction through the Bypass network"""
    WITH_BYPASS = "with_bypass"
    NO_BYPASS = "no_bypass"


# ============================================================================
# Domain types
# ============================================================================

@dataclass
class AnnParams:
    """Parameters of all four sub-networks"""
    base: Network
    prediction: Network
    bias: Network
    bypass: Optional[Network]
    variant: Variant

    def __post_init__(self):
        self.variant = Variant(self.variant)
        z_dim = self.base.out_dim
        if self.prediction.in_dim != z_dim:
            raise ConfigurationError(
                f"Prediction network reads {self.prediction.in_dim} inputs, base emits {z_dim}"
            )
        if self.bias.in_dim != z_dim:
            raise ConfigurationError(f"Bias network reads {self.bias.in_dim} inputs, base emits {z_dim}")
        for name, net in (("prediction", self.prediction), ("bias", self.bias)):
            if net.out_dim != 1 or net.layers[-1].activation is not Activation.LINEAR:
                raise ConfigurationError(f"The {name} network must end in a single linear unit")

        if self.variant is Variant.NO_BYPASS:
            if self.bypass is not None:
                raise ConfigurationError("no_bypass variant cannot carry a bypass network")
        else:
            if self.bypass is None:
                raise ConfigurationError("with_bypass variant needs a bypass network")
            if self.bypass.in_dim != 1 or self.bypass.out_dim != 1:
                raise ConfigurationError("The bypass network maps the scalar b to a scalar term")
            head = self.bypass.layers[-1]
            if head.activation is not Activation.LINEAR or head.use_bias:
                raise ConfigurationError("The bypass output layer is linear with no offset")

    @property
    def n_features(self) -> int:
        return self.base.in_dim

    @property
    def has_bypass(self) -> bool:
        return self.variant is Variant.WITH_BYPASS

    def noisy_networks(self) -> List[Network]:
        """Networks updated by the noisy loss (theta_A, theta_Y, theta_BY)"""
        nets = [self.base, self.prediction]
        if self.bypass is not None:
            nets.append(self.bypass)
        return nets

    def copy(self) -> "AnnParams":
        return AnnParams(
            base=self.base.copy(),
            prediction=self.prediction.copy(),
            bias=self.bias.copy(),
            bypass=None if self.bypass is None else self.bypass.copy(),
            variant=self.variant,
        )


@dataclass
class AnnPrediction:
    y_hat: np.ndarray
    b_hat: np.ndarray
    z_a: np.ndarray


@dataclass
class AnnForwardPass:
    """Everything one forward pass produced, kept for backprop"""
    z_a: np.ndarray
    base_trace: ForwardTrace
    prediction_trace: ForwardTrace
    bias_trace: ForwardTrace
    bypass_trace: Optional[ForwardTrace]
    logit: np.ndarray
    y_hat: np.ndarray
    b_hat: np.ndarray

    def prediction(self) -> AnnPrediction:
        return AnnPrediction(y_hat=self.y_hat.ravel(), b_hat=self.b_hat.ravel(), z_a=self.z_a)


@dataclass
class NoisyGrads:
    base: ParamGrads
    prediction: ParamGrads
    bypass: Optional[ParamGrads]


# ============================================================================
# Construction
# ============================================================================

def _stack(in_dim: int, hidden: List[int], out_dim: int):
    dims = [in_dim, *hidden, out_dim]
    acts = [Activation.TANH] * len(hidden) + [Activation.LINEAR]
    return dims, acts


def init_ann_params(n_features: int, cfg: "TrainConfig") -> AnnParams:
    """Fresh parameters for the architecture described by `cfg`"""
    if not cfg.base_widths:
        raise ConfigurationError("base_widths needs at least one layer")
    seeds = np.random.SeedSequence(cfg.rng_seed).generate_state(4)

    base_dims = [n_features, *cfg.base_widths]
    base = init_network(base_dims, [Activation.TANH] * len(cfg.base_widths), int(seeds[0]))
    z_dim = base.out_dim

    dims, acts = _stack(z_dim, list(cfg.prediction_widths), 1)
    prediction = init_network(dims, acts, int(seeds[1]))

    dims, acts = _stack(z_dim, list(cfg.bias_widths), 1)
    bias = init_network(dims, acts, int(seeds[2]))

    bypass = None
    variant = Variant(cfg.variant)
    if variant is Variant.WITH_BYPASS:
        dims, acts = _stack(1, list(cfg.bypass_widths), 1)
        flags = [True] * (len(dims) - 2) + [False]
        bypass = init_network(dims, acts, int(seeds[3]), use_bias=flags)

    return AnnParams(base=base, prediction=prediction, bias=bias, bypass=bypass, variant=variant)


# ============================================================================
# Forward / backward
# ============================================================================

def _as_column(b, n: int) -> np.ndarray:
    b = np.asarray(b, dtype=np.float64).reshape(-1, 1)
    if b.shape[0] != n:
        raise InputError(f"b has {b.shape[0]} rows, X has {n}")
    return b


def ann_forward_pass(params: AnnParams, X: np.ndarray, b: Optional[np.ndarray]) -> AnnForwardPass:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.n_features:
        raise InputError(f"Expected X of shape (n, {params.n_features}), got {X.shape}")
    n = X.shape[0]

    z_a, base_trace = forward(params.base, X)
    s_y, prediction_trace = forward(params.prediction, z_a)
    b_hat, bias_trace = forward(params.bias, z_a)

    logit = s_y
    bypass_trace = None
    if params.bypass is not None:
        if b is None:
            raise InputError("with_bypass variant needs b")
        s_by, bypass_trace = forward(params.bypass, _as_column(b, n))
        logit = s_y + s_by

    return AnnForwardPass(
        z_a=z_a,
        base_trace=base_trace,
        prediction_trace=prediction_trace,
        bias_trace=bias_trace,
        bypass_trace=bypass_trace,
        logit=logit,
        y_hat=expit(logit),
        b_hat=b_hat,
    )


def ann_forward(params: AnnParams, X: np.ndarray, b: Optional[np.ndarray]) -> AnnPrediction:
    """Click probabilities, the adversary's estimate of b, and Z_A"""
    return ann_forward_pass(params, X, b).prediction()


def noisy_backward(
    params: AnnParams,
    fwd: AnnForwardPass,
    grad_y_hat: np.ndarray,
    grad_b_hat: np.ndarray,
) -> NoisyGrads:
    """
    Gradients of a loss in (y_hat, b_hat) w.r.t. theta_A, theta_Y, theta_BY.

    The b_hat gradient travels through the (frozen) Bias network into Z_A;
    the Bias network's own parameter gradients are discarded.
    """
    s = fwd.y_hat
    d_logit = np.asarray(grad_y_hat, dtype=np.float64).reshape(s.shape) * s * (1.0 - s)

    prediction_grads, dz_from_prediction = backward(params.prediction, fwd.prediction_trace, d_logit)
    _, dz_from_bias = backward(
        params.bias, fwd.bias_trace, np.asarray(grad_b_hat, dtype=np.float64).reshape(fwd.b_hat.shape)
    )
    base_grads, _ = backward(params.base, fwd.base_trace, dz_from_prediction + dz_from_bias)

    bypass_grads = None
    if params.bypass is not None:
        bypass_grads, _ = backward(params.bypass, fwd.bypass_trace, d_logit)

    return NoisyGrads(base=base_grads, prediction=prediction_grads, bypass=bypass_grads)


# ============================================================================
# Inference
# ============================================================================

def infer(
    params: AnnParams,
    X: np.ndarray,
    b: Optional[np.ndarray] = None,
    *,
    position1_ctr: Optional[float] = None,
) -> np.ndarray:
    """
    Click predictions without the Bias network.

    Pass either the per-row `b` seen in training or `position1_ctr` to feed
    the same scalar to every row (the convention for unseen traffic), never both.
    """
    X = np.asarray(X, dtype=np.float64)
    if b is not None and position1_ctr is not None:
        raise ConfigurationError("Pass either b or position1_ctr, not both")
    if position1_ctr is not None:
        b = np.full(X.shape[0], float(position1_ctr))
    if b is None and params.has_bypass:
        raise ConfigurationError("Inference with the bypass needs b or a position-1 CTR")

    if X.ndim != 2 or X.shape[1] != params.n_features:
        raise InputError(f"Expected X of shape (n, {params.n_features}), got {X.shape}")

    z_a, _ = forward(params.base, X)
    logit, _ = forward(params.prediction, z_a)
    if params.bypass is not None:
        s_by, _ = forward(params.bypass, _as_column(b, X.shape[0]))
        logit = logit + s_by
    return expit(logit).ravel()


def bypass_prediction_diff(params: AnnParams, X: np.ndarray, b1: float, b2: float) -> float:
    """Mean |y_hat(b1) - y_hat(b2)| over rows; exactly 0 without a bypass"""
    if not params.has_bypass:
        logger.debug("no_bypass model: bypass prediction diff is 0")
        return 0.0
    y1 = infer(params, X, position1_ctr=b1)
    y2 = infer(params, X, position1_ctr=b2)
    return float(np.mean(np.abs(y1 - y2)))
