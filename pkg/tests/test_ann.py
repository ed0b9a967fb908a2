"""ANN composite: structure, forward, gradient flow and inference"""

import numpy as np
import pytest
from scipy.special import expit

from app.exceptions import ConfigurationError, InputError
from app.losses import noisy_loss
from app.models.ann import (
    AnnParams,
    Variant,
    ann_forward,
    ann_forward_pass,
    bypass_prediction_diff,
    infer,
    init_ann_params,
    noisy_backward,
)
from app.models.network import Activation, DenseLayer, Network
from app.schemas import TrainConfig


def _params(variant=Variant.WITH_BYPASS, seed=0, n_features=3):
    cfg = TrainConfig(
        base_widths=[4], prediction_widths=[3], bias_widths=[3], bypass_widths=[1],
        variant=variant, rng_seed=seed,
    )
    return init_ann_params(n_features, cfg)


def _zeroed(params):
    for net in [params.base, params.prediction, params.bias] + ([params.bypass] if params.bypass else []):
        for layer in net.layers:
            layer.weights[:] = 0.0
            layer.biases[:] = 0.0
    return params


def _batch(n=6, n_features=3, seed=1):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, n_features))
    y = np.array([0.0, 1.0] * (n // 2))
    b = rng.uniform(0.3, 0.5, size=n)
    return X, y, b


class TestStructure:
    def test_default_architecture(self):
        params = init_ann_params(10, TrainConfig())
        assert params.base.in_dim == 10
        assert params.base.out_dim == 10
        assert [layer.out_dim for layer in params.prediction.layers] == [10, 1]
        assert [layer.out_dim for layer in params.bias.layers] == [10, 1]
        assert params.bypass.in_dim == 1
        assert [layer.out_dim for layer in params.bypass.layers] == [1, 1]
        assert params.bypass.layers[0].activation is Activation.TANH
        assert params.bypass.layers[-1].use_bias is False
        assert params.bias.layers[-1].activation is Activation.LINEAR

    def test_no_bypass_variant_has_no_bypass(self):
        params = _params(Variant.NO_BYPASS)
        assert params.bypass is None
        assert not params.has_bypass

    def test_bias_width_must_match_base(self):
        params = _params()
        wrong = Network([DenseLayer(np.zeros((1, 7)), np.zeros(1), Activation.LINEAR)])
        with pytest.raises(ConfigurationError):
            AnnParams(params.base, params.prediction, wrong, params.bypass, Variant.WITH_BYPASS)

    def test_with_bypass_requires_bypass(self):
        params = _params()
        with pytest.raises(ConfigurationError):
            AnnParams(params.base, params.prediction, params.bias, None, Variant.WITH_BYPASS)

    def test_bypass_output_has_no_offset(self):
        params = _params()
        bypass = Network([
            DenseLayer(np.ones((1, 1)), np.zeros(1), Activation.TANH),
            DenseLayer(np.ones((1, 1)), np.zeros(1), Activation.LINEAR, use_bias=True),
        ])
        with pytest.raises(ConfigurationError):
            AnnParams(params.base, params.prediction, params.bias, bypass, Variant.WITH_BYPASS)

    def test_deterministic_init(self):
        a, b = _params(seed=4), _params(seed=4)
        for net_a, net_b in zip(a.noisy_networks() + [a.bias], b.noisy_networks() + [b.bias]):
            for la, lb in zip(net_a.layers, net_b.layers):
                assert np.array_equal(la.weights, lb.weights)


class TestForward:
    def test_zero_weights(self):
        params = _zeroed(_params())
        X, _, b = _batch()
        out = ann_forward(params, X, b)
        assert np.all(out.y_hat == 0.5)
        assert np.all(out.b_hat == 0.0)
        assert out.z_a.shape == (6, 4)

    def test_matches_step_by_step_computation(self):
        params = _params(seed=2)
        X, _, b = _batch()

        def dense(a, layer):
            z = a @ layer.weights.T + layer.biases
            return np.tanh(z) if layer.activation is Activation.TANH else z

        z_a = X
        for layer in params.base.layers:
            z_a = dense(z_a, layer)
        s_y = z_a
        for layer in params.prediction.layers:
            s_y = dense(s_y, layer)
        s_by = b.reshape(-1, 1)
        for layer in params.bypass.layers:
            s_by = dense(s_by, layer)

        out = ann_forward(params, X, b)
        np.testing.assert_allclose(out.y_hat, expit(s_y + s_by).ravel(), rtol=1e-14)

    def test_bypass_reads_b(self):
        params = _params(seed=3)
        params.bypass.layers[-1].weights[:] = 2.0
        X, _, b = _batch()
        assert not np.allclose(ann_forward(params, X, b).y_hat, ann_forward(params, X, b + 0.3).y_hat)

    def test_no_bypass_ignores_b(self):
        params = _params(Variant.NO_BYPASS, seed=3)
        X, _, b = _batch()
        assert np.array_equal(ann_forward(params, X, b).y_hat, ann_forward(params, X, b + 0.3).y_hat)

    def test_shape_mismatch(self):
        params = _params()
        with pytest.raises(InputError):
            ann_forward(params, np.zeros((4, 5)), np.zeros(4))
        with pytest.raises(InputError):
            ann_forward(params, np.zeros((4, 3)), np.zeros(3))


class TestNoisyBackward:
    def _pairs(self, params, grads):
        """(parameter, analytic gradient) for every trainable array"""
        nets = zip(params.noisy_networks(), (grads.base, grads.prediction, grads.bypass))
        pairs = []
        for net, net_grads in nets:
            for layer, g in zip(net.layers, net_grads):
                pairs.append((layer.weights, g.weights))
                if layer.use_bias:
                    pairs.append((layer.biases, g.biases))
        return pairs

    @pytest.mark.parametrize("variant", list(Variant))
    @pytest.mark.parametrize("n", [2, 17, 100])
    def test_matches_finite_differences(self, variant, n):
        params = _params(variant, seed=5)
        X, y, b = _batch(n=n + (n % 2), seed=n)
        X, y, b = X[:n], y[:n], b[:n]
        y[0], y[-1] = 0.0, 1.0
        lam = 0.7

        def loss():
            out = ann_forward(params, X, b)
            return noisy_loss(y, out.y_hat, b, out.b_hat, lam).value

        fwd = ann_forward_pass(params, X, b)
        value = noisy_loss(y, fwd.y_hat, b, fwd.b_hat, lam)
        grads = noisy_backward(params, fwd, value.grad_y_hat, value.grad_b_hat)
        eps = 1e-6
        for param, g in self._pairs(params, grads):
            numeric = np.zeros_like(param)
            for idx in np.ndindex(param.shape):
                saved = param[idx]
                param[idx] = saved + eps
                up = loss()
                param[idx] = saved - eps
                down = loss()
                param[idx] = saved
                numeric[idx] = (up - down) / (2 * eps)
            np.testing.assert_allclose(g, numeric, rtol=1e-5, atol=1e-8)

    def test_covariance_term_reaches_base_network(self):
        params = _params(seed=6)
        X, y, b = _batch(n=10, seed=2)
        fwd = ann_forward_pass(params, X, b)
        value = noisy_loss(y, fwd.y_hat, b, fwd.b_hat, 1.0)
        grads = noisy_backward(params, fwd, value.grad_y_hat, value.grad_b_hat)
        assert np.any(grads.base[0].weights != 0.0)
        assert np.all(grads.prediction[-1].weights == 0.0)


class TestInference:
    def test_given_b_matches_forward(self):
        params = _params(seed=7)
        X, _, b = _batch()
        assert np.array_equal(infer(params, X, b), ann_forward(params, X, b).y_hat)

    def test_position1_ctr_broadcast(self):
        params = _params(seed=7)
        X, _, _ = _batch()
        assert np.array_equal(infer(params, X, position1_ctr=0.464), infer(params, X, np.full(6, 0.464)))

    def test_missing_ctr(self):
        params = _params(seed=7)
        with pytest.raises(ConfigurationError):
            infer(params, np.zeros((2, 3)))

    def test_both_policies_at_once_rejected(self):
        params = _params(seed=7)
        X, _, b = _batch()
        with pytest.raises(ConfigurationError, match="not both"):
            infer(params, X, b, position1_ctr=0.464)

    def test_no_bypass_policies_agree(self):
        params = _params(Variant.NO_BYPASS, seed=7)
        X, _, b = _batch()
        assert np.array_equal(infer(params, X, b), infer(params, X, position1_ctr=0.464))
        assert np.array_equal(infer(params, X), infer(params, X, b))

    def test_bypass_diff(self):
        params = _params(seed=8)
        params.bypass.layers[-1].weights[:] = 3.0
        X, _, _ = _batch()
        assert bypass_prediction_diff(params, X, 0.464, 0.464) == 0.0
        assert bypass_prediction_diff(params, X, 0.464, 0.414) > 0.0

    def test_bypass_diff_dead_bypass(self):
        params = _params(seed=8)
        params.bypass.layers[-1].weights[:] = 0.0
        X, _, _ = _batch()
        assert bypass_prediction_diff(params, X, 0.464, 0.414) == 0.0

    def test_bypass_diff_no_bypass_is_zero(self):
        params = _params(Variant.NO_BYPASS, seed=8)
        X, _, _ = _batch()
        assert bypass_prediction_diff(params, X, 0.464, 0.414) == 0.0
