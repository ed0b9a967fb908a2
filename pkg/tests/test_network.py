"""Dense network engine: construction, forward, backward and SGD"""

import numpy as np
import pytest

from app.exceptions import ConfigurationError, InputError, TrainingError
from app.models.network import (
    Activation,
    DenseLayer,
    LayerGrads,
    Network,
    backward,
    forward,
    init_network,
    sgd_step,
)


def _numeric_grads(net, X, target, eps=1e-5):
    """Central differences of 0.5 * ||net(X) - target||^2 w.r.t. every parameter"""

    def loss():
        out, _ = forward(net, X)
        return 0.5 * np.sum((out - target) ** 2)

    grads = []
    for param in net.parameters():
        g = np.zeros_like(param)
        for idx in np.ndindex(param.shape):
            saved = param[idx]
            param[idx] = saved + eps
            up = loss()
            param[idx] = saved - eps
            down = loss()
            param[idx] = saved
            g[idx] = (up - down) / (2 * eps)
        grads.append(g)
    return grads


def _assert_grad_close(analytic, numeric):
    np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-7)


class TestInitNetwork:
    def test_shapes_and_zero_biases(self):
        net = init_network([10, 5, 1], [Activation.TANH, Activation.SIGMOID], rng_seed=7)
        assert net.depth == 2
        assert net.layers[0].weights.shape == (5, 10)
        assert net.layers[1].weights.shape == (1, 5)
        assert all(np.all(layer.biases == 0.0) for layer in net.layers)

    def test_weights_within_scale(self):
        net = init_network([16, 4], [Activation.TANH], rng_seed=1)
        assert np.all(np.abs(net.layers[0].weights) <= 1.0 / np.sqrt(16))

    def test_deterministic_per_seed(self):
        a = init_network([10, 10], [Activation.TANH], rng_seed=7)
        b = init_network([10, 10], [Activation.TANH], rng_seed=7)
        c = init_network([10, 10], [Activation.TANH], rng_seed=8)
        assert np.array_equal(a.layers[0].weights, b.layers[0].weights)
        assert not np.array_equal(a.layers[0].weights, c.layers[0].weights)

    def test_activation_count_mismatch(self):
        with pytest.raises(ConfigurationError):
            init_network([3, 4, 1], [Activation.TANH], rng_seed=0)

    def test_layers_must_chain(self):
        first = DenseLayer(np.zeros((4, 3)), np.zeros(4), Activation.TANH)
        second = DenseLayer(np.zeros((1, 5)), np.zeros(1), Activation.LINEAR)
        with pytest.raises(ConfigurationError):
            Network([first, second])

    def test_bias_shape_checked(self):
        with pytest.raises(ConfigurationError):
            DenseLayer(np.zeros((4, 3)), np.zeros(3), Activation.TANH)

    def test_unknown_activation(self):
        with pytest.raises(ConfigurationError):
            DenseLayer(np.zeros((1, 1)), np.zeros(1), "relu")


class TestForward:
    def test_zero_weights(self):
        X = np.random.default_rng(0).normal(size=(5, 3))
        tanh_net = Network([DenseLayer(np.zeros((2, 3)), np.zeros(2), Activation.TANH)])
        sigmoid_net = Network([DenseLayer(np.zeros((2, 3)), np.zeros(2), Activation.SIGMOID)])
        assert np.all(forward(tanh_net, X)[0] == 0.0)
        assert np.all(forward(sigmoid_net, X)[0] == 0.5)

    def test_identity_linear(self):
        X = np.random.default_rng(0).normal(size=(5, 3))
        net = Network([DenseLayer(np.eye(3), np.zeros(3), Activation.LINEAR)])
        out, trace = forward(net, X)
        assert np.array_equal(out, X)
        assert trace.depth == 1

    def test_input_width_mismatch(self):
        net = init_network([3, 2], [Activation.TANH], rng_seed=0)
        with pytest.raises(InputError):
            forward(net, np.zeros((4, 2)))

    def test_batch_matches_rowwise(self):
        net = init_network([3, 4, 2], [Activation.TANH, Activation.SIGMOID], rng_seed=2)
        X = np.random.default_rng(1).normal(size=(6, 3))
        batch, _ = forward(net, X)
        rows = np.vstack([forward(net, X[i:i + 1])[0] for i in range(6)])
        np.testing.assert_allclose(batch, rows, atol=1e-12, rtol=0)

    def test_deterministic(self):
        net = init_network([3, 4, 1], [Activation.TANH, Activation.LINEAR], rng_seed=2)
        X = np.random.default_rng(1).normal(size=(6, 3))
        assert np.array_equal(forward(net, X)[0], forward(net, X)[0])


class TestBackward:
    @pytest.mark.parametrize("activation", list(Activation))
    def test_matches_finite_differences(self, activation):
        net = init_network([3, 4, 2, 1], [Activation.TANH, activation, Activation.LINEAR], rng_seed=5)
        for layer in net.layers:
            layer.biases[:] = np.random.default_rng(9).normal(scale=0.1, size=layer.biases.shape)
        rng = np.random.default_rng(3)
        X = rng.normal(size=(7, 3))
        target = rng.normal(size=(7, 1))

        out, trace = forward(net, X)
        grads, _ = backward(net, trace, out - target)
        numeric = _numeric_grads(net, X, target)

        analytic = [g for layer in grads for g in (layer.weights, layer.biases)]
        for a, n in zip(analytic, numeric):
            _assert_grad_close(a, n)

    def test_input_gradient(self):
        net = init_network([3, 4, 1], [Activation.TANH, Activation.LINEAR], rng_seed=4)
        X = np.random.default_rng(2).normal(size=(2, 3))
        out, trace = forward(net, X)
        _, input_grad = backward(net, trace, np.ones_like(out))

        eps = 1e-5
        numeric = np.zeros_like(X)
        for idx in np.ndindex(X.shape):
            up, down = X.copy(), X.copy()
            up[idx] += eps
            down[idx] -= eps
            numeric[idx] = (forward(net, up)[0].sum() - forward(net, down)[0].sum()) / (2 * eps)
        _assert_grad_close(input_grad, numeric)

    def test_zero_output_grad(self):
        net = init_network([3, 4, 1], [Activation.TANH, Activation.LINEAR], rng_seed=4)
        out, trace = forward(net, np.ones((3, 3)))
        grads, input_grad = backward(net, trace, np.zeros_like(out))
        assert all(np.all(g.weights == 0) and np.all(g.biases == 0) for g in grads)
        assert np.all(input_grad == 0)

    def test_linear_layer_weight_gradient_is_input(self):
        net = Network([DenseLayer(np.array([[0.3, -0.2]]), np.zeros(1), Activation.LINEAR)])
        x = np.array([[2.0, 5.0]])
        _, trace = forward(net, x)
        grads, _ = backward(net, trace, np.ones((1, 1)))
        assert np.array_equal(grads[0].weights, x)

    def test_no_bias_layer_reports_zero_bias_grad(self):
        net = init_network([1, 1], [Activation.LINEAR], rng_seed=0, use_bias=[False])
        out, trace = forward(net, np.ones((4, 1)))
        grads, _ = backward(net, trace, np.ones_like(out))
        assert np.all(grads[0].biases == 0.0)

    def test_trace_mismatch(self):
        net = init_network([3, 4, 1], [Activation.TANH, Activation.LINEAR], rng_seed=4)
        other = init_network([3, 1], [Activation.LINEAR], rng_seed=4)
        out, trace = forward(other, np.ones((2, 3)))
        with pytest.raises(RuntimeError):
            backward(net, trace, out)


class TestSgdStep:
    def _single_weight(self, w=1.0):
        return Network([DenseLayer(np.array([[w]]), np.zeros(1), Activation.LINEAR)])

    def test_arithmetic(self):
        net = self._single_weight()
        sgd_step(net, [LayerGrads(np.array([[2.0]]), np.zeros(1))], 0.1)
        assert net.layers[0].weights[0, 0] == pytest.approx(0.8)

    def test_zero_learning_rate(self):
        net = init_network([3, 2], [Activation.TANH], rng_seed=0)
        before = net.copy()
        grads = [LayerGrads(np.ones((2, 3)), np.ones(2))]
        sgd_step(net, grads, 0.0)
        assert np.array_equal(net.layers[0].weights, before.layers[0].weights)

    def test_two_steps_equal_summed_step(self):
        a = init_network([3, 2], [Activation.TANH], rng_seed=0)
        b = a.copy()
        g1 = LayerGrads(np.full((2, 3), 0.5), np.full(2, 0.25))
        g2 = LayerGrads(np.full((2, 3), -1.5), np.full(2, 0.75))
        sgd_step(a, [g1], 0.1)
        sgd_step(a, [g2], 0.1)
        sgd_step(b, [LayerGrads(g1.weights + g2.weights, g1.biases + g2.biases)], 0.1)
        np.testing.assert_allclose(a.layers[0].weights, b.layers[0].weights, atol=1e-15)
        np.testing.assert_allclose(a.layers[0].biases, b.layers[0].biases, atol=1e-15)

    def test_non_finite_gradient_rejected_without_update(self):
        net = init_network([3, 2, 1], [Activation.TANH, Activation.LINEAR], rng_seed=0)
        before = net.copy()
        grads = [
            LayerGrads(np.ones((2, 3)), np.ones(2)),
            LayerGrads(np.array([[np.nan, 0.0]]), np.zeros(1)),
        ]
        with pytest.raises(TrainingError) as exc_info:
            sgd_step(net, grads, 0.1, batch_index=4)
        assert exc_info.value.batch_index == 4
        for layer, old in zip(net.layers, before.layers):
            assert np.array_equal(layer.weights, old.weights)

    def test_no_bias_layer_keeps_biases(self):
        net = init_network([1, 1], [Activation.LINEAR], rng_seed=0, use_bias=[False])
        sgd_step(net, [LayerGrads(np.ones((1, 1)), np.ones(1))], 0.5)
        assert net.layers[0].biases[0] == 0.0
