"""
Dense feed-forward network engine
Explicit forward/backward passes and plain SGD, enough to express the
Base, Prediction, Bias and Bypass sub-networks.

Shapes follow the row-major batch convention: inputs are (n, in_dim),
layer weights are (out_dim, in_dim) and each layer computes
    z = a_prev @ W.T + b,   a = act(z)
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from app.exceptions import ConfigurationError, InputError, TrainingError

DTYPE = np.float64


class Activation(str, enum.Enum):
    """Supported activation kinds"""
    TANH = "tanh"
    SIGMOID = "sigmoid"
    LINEAR = "linear"


def activate(kind: Activation, z: np.ndarray) -> np.ndarray:
    if kind is Activation.TANH:
        return np.tanh(z)
    if kind is Activation.SIGMOID:
        return expit(z)
    return z


def activation_derivative(kind: Activation, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    """d act / d z, expressed through the cached activation where possible"""
    if kind is Activation.TANH:
        return 1.0 - a * a
    if kind is Activation.SIGMOID:
        return a * (1.0 - a)
    return np.ones_like(z)


# ============================================================================
# Domain types
# ============================================================================

@dataclass
class DenseLayer:
    """
    One fully connected layer.

    `use_bias=False` pins the biases at zero: backward reports a zero bias
    gradient and sgd_step leaves them alone.
    """
    weights: np.ndarray
    biases: np.ndarray
    activation: Activation
    use_bias: bool = True

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=DTYPE)
        self.biases = np.asarray(self.biases, dtype=DTYPE)
        try:
            self.activation = Activation(self.activation)
        except ValueError as exc:
            raise ConfigurationError(f"Unknown activation: {self.activation}") from exc
        if self.weights.ndim != 2:
            raise ConfigurationError(f"Layer weights must be 2-D, got shape {self.weights.shape}")
        if self.biases.shape != (self.weights.shape[0],):
            raise ConfigurationError(
                f"Bias shape {self.biases.shape} does not match out_dim {self.weights.shape[0]}"
            )

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.weights.copy(), self.biases.copy(), self.activation, self.use_bias)


@dataclass
class Network:
    """Ordered stack of dense layers whose dimensions chain"""
    layers: List[DenseLayer]

    def __post_init__(self):
        if not self.layers:
            raise ConfigurationError("A network needs at least one layer")
        for i in range(len(self.layers) - 1):
            if self.layers[i].out_dim != self.layers[i + 1].in_dim:
                raise ConfigurationError(
                    f"Layer {i} out_dim {self.layers[i].out_dim} does not chain into "
                    f"layer {i + 1} in_dim {self.layers[i + 1].in_dim}"
                )

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def depth(self) -> int:
        return len(self.layers)

    def parameters(self) -> Iterator[np.ndarray]:
        """Every weight matrix and bias vector, layer by layer"""
        for layer in self.layers:
            yield layer.weights
            yield layer.biases

    def copy(self) -> "Network":
        return Network([layer.copy() for layer in self.layers])


@dataclass
class ForwardTrace:
    """Per-layer values of one forward pass, kept for backprop"""
    inputs: np.ndarray
    pre_activations: List[np.ndarray] = field(default_factory=list)
    activations: List[np.ndarray] = field(default_factory=list)

    @property
    def depth(self) -> int:
        return len(self.activations)


@dataclass
class LayerGrads:
    weights: np.ndarray
    biases: np.ndarray


ParamGrads = List[LayerGrads]


# ============================================================================
# Operations
# ============================================================================

def init_network(
    layer_dims: Sequence[int],
    activations: Sequence[Activation],
    rng_seed: int,
    *,
    use_bias: Optional[Sequence[bool]] = None,
) -> Network:
    """
    Build a network with weights ~ U[-1/sqrt(in_dim), +1/sqrt(in_dim)] and
    zero biases. `layer_dims` includes the input width, so a network with
    L layers takes L + 1 dims.
    """
    dims = [int(d) for d in layer_dims]
    if len(dims) < 2:
        raise ConfigurationError("layer_dims needs an input width and at least one layer width")
    if any(d <= 0 for d in dims):
        raise ConfigurationError(f"Layer widths must be positive, got {dims}")
    if len(activations) != len(dims) - 1:
        raise ConfigurationError(
            f"Expected {len(dims) - 1} activations for dims {dims}, got {len(activations)}"
        )
    if use_bias is None:
        use_bias = [True] * (len(dims) - 1)
    if len(use_bias) != len(dims) - 1:
        raise ConfigurationError("use_bias needs one flag per layer")

    rng = np.random.default_rng(rng_seed)
    layers = []
    for in_dim, out_dim, act, with_bias in zip(dims[:-1], dims[1:], activations, use_bias):
        bound = 1.0 / np.sqrt(in_dim)
        weights = rng.uniform(-bound, bound, size=(out_dim, in_dim))
        layers.append(DenseLayer(weights, np.zeros(out_dim, dtype=DTYPE), Activation(act), with_bias))
    return Network(layers)


def forward(net: Network, X: np.ndarray) -> Tuple[np.ndarray, ForwardTrace]:
    """Run a batch through the network, recording every layer"""
    X = np.asarray(X, dtype=DTYPE)
    if X.ndim != 2 or X.shape[1] != net.in_dim:
        raise InputError(f"Expected input of shape (n, {net.in_dim}), got {X.shape}")

    trace = ForwardTrace(inputs=X)
    a = X
    for layer in net.layers:
        z = a @ layer.weights.T + layer.biases
        a = activate(layer.activation, z)
        trace.pre_activations.append(z)
        trace.activations.append(a)
    return a, trace


def backward(
    net: Network,
    trace: ForwardTrace,
    output_grad: np.ndarray,
) -> Tuple[ParamGrads, np.ndarray]:
    """
    Backpropagate d(loss)/d(output) through the network.

    Returns the gradients for every layer (same order as net.layers) and
    d(loss)/d(input), which is what lets a frozen downstream network pass
    gradient into an upstream one.
    """
    if trace.depth != net.depth:
        raise RuntimeError(
            f"Trace depth {trace.depth} does not match network depth {net.depth}"
        )
    output_grad = np.asarray(output_grad, dtype=DTYPE)
    expected = trace.activations[-1].shape
    if output_grad.shape != expected:
        raise InputError(f"output_grad shape {output_grad.shape} does not match output {expected}")

    grads: ParamGrads = [None] * net.depth  # type: ignore[list-item]
    da = output_grad
    for i in reversed(range(net.depth)):
        layer = net.layers[i]
        z, a = trace.pre_activations[i], trace.activations[i]
        a_prev = trace.activations[i - 1] if i > 0 else trace.inputs
        if layer.weights.shape[1] != a_prev.shape[1]:
            raise RuntimeError(f"Trace does not belong to this network (layer {i})")

        dz = da * activation_derivative(layer.activation, z, a)
        d_weights = dz.T @ a_prev
        d_biases = dz.sum(axis=0) if layer.use_bias else np.zeros_like(layer.biases)
        grads[i] = LayerGrads(d_weights, d_biases)
        da = dz @ layer.weights

    return grads, da


def sgd_step(
    net: Network,
    param_grads: ParamGrads,
    learning_rate: float,
    *,
    batch_index: Optional[int] = None,
) -> None:
    """In-place update p <- p - lr * grad(p) for every parameter of `net`"""
    if learning_rate < 0:
        raise ConfigurationError(f"learning_rate must be non-negative, got {learning_rate}")
    if len(param_grads) != net.depth:
        raise InputError(f"Got gradients for {len(param_grads)} layers, network has {net.depth}")

    for i, (layer, g) in enumerate(zip(net.layers, param_grads)):
        if g.weights.shape != layer.weights.shape or g.biases.shape != layer.biases.shape:
            raise InputError(f"Gradient shapes do not match layer {i}")
        if not (np.all(np.isfinite(g.weights)) and np.all(np.isfinite(g.biases))):
            raise TrainingError(f"Non-finite gradient in layer {i}", batch_index=batch_index)

    # A rejected step leaves every parameter untouched
    for layer, g in zip(net.layers, param_grads):
        layer.weights -= learning_rate * g.weights
        if layer.use_bias:
            layer.biases -= learning_rate * g.biases
