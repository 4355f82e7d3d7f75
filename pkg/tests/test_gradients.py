"""Analytic gradients vs central finite differences, in 64-bit, for every
layer and loss: >= 20 random instances per op at max relative gap < 1e-4."""

import numpy as np
import pytest

from conftest import assert_grad_close, numerical_grad
from tuplenet.core import (Activation, ConvFilterBank, DenseOutput, Dropout,
                           Flatten, Model, TiedDeconv, TimeConv, l2svm_loss,
                           softmax_nll, _l2svm_batch, _softmax_nll_batch)
from tuplenet.schemes import _msre_batch, _neg_dot_batch

SEEDS = range(20)


def _random_bank(rng, k, w, c, activation):
    return ConvFilterBank(rng.normal(0.0, 0.5, size=(k, w, c)), activation)


def _projection(rng, shape):
    """Random linear readout making a scalar objective out of layer output."""
    return rng.normal(size=shape)


def _layer_param_grads(layer, x, r):
    """Analytic gradients of sum(r * layer(x)) for every parameter."""
    for p in layer.params():
        p.zero_grad()
    out = layer.forward(x)
    layer.backward(np.broadcast_to(r, out.shape).copy())
    return [p.grad.copy() for p in layer.params()]


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("activation", [Activation.LINEAR, Activation.TANH])
def test_conv_weight_and_input_gradients(seed, activation):
    rng = np.random.default_rng(seed)
    k, w, c, n = 2, 3, 3, 9
    bank = _random_bank(rng, k, w, c, activation)
    layer = TimeConv(bank)
    x = rng.normal(size=(1, c, n))
    r = _projection(rng, (1, k, n - w + 1))

    analytic_w = _layer_param_grads(layer, x, r)[0]

    def f_w(values):
        probe = TimeConv(ConvFilterBank(values, activation))
        return float((r * probe.forward(x)).sum())

    assert_grad_close(analytic_w, numerical_grad(f_w, bank.weights.value))

    layer.forward(x)
    analytic_x = layer.backward(r.copy())

    def f_x(values):
        return float((r * layer.forward(values)).sum())

    assert_grad_close(analytic_x, numerical_grad(f_x, x))


@pytest.mark.parametrize("seed", SEEDS)
def test_strided_conv_gradients(seed):
    rng = np.random.default_rng(seed)
    bank = _random_bank(rng, 2, 3, 2, Activation.TANH)
    layer = TimeConv(bank, stride=2)
    x = rng.normal(size=(1, 2, 12))
    r = _projection(rng, (1,) + layer.out_shape(12))

    analytic_w = _layer_param_grads(layer, x, r)[0]

    def f_w(values):
        probe = TimeConv(ConvFilterBank(values, Activation.TANH), stride=2)
        return float((r * probe.forward(x)).sum())

    assert_grad_close(analytic_w, numerical_grad(f_w, bank.weights.value))

    layer.forward(x)
    analytic_x = layer.backward(r.copy())
    assert_grad_close(analytic_x,
                      numerical_grad(lambda v: float((r * layer.forward(v)).sum()), x))


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("activation", [Activation.LINEAR, Activation.TANH])
def test_tied_deconv_gradients(seed, activation):
    rng = np.random.default_rng(seed)
    k, w, c, m = 2, 3, 3, 6
    bank = _random_bank(rng, k, w, c, activation)
    layer = TiedDeconv(bank)
    code = rng.normal(size=(1, k, m))
    r = _projection(rng, (1, c, m + w - 1))

    analytic_w = _layer_param_grads(layer, code, r)[0]

    def f_w(values):
        probe = TiedDeconv(ConvFilterBank(values, activation))
        return float((r * probe.forward(code)).sum())

    assert_grad_close(analytic_w, numerical_grad(f_w, bank.weights.value))

    layer.forward(code)
    analytic_code = layer.backward(r.copy())
    assert_grad_close(
        analytic_code,
        numerical_grad(lambda v: float((r * layer.forward(v)).sum()), code))


@pytest.mark.parametrize("seed", SEEDS)
def test_tied_autoencoder_accumulates_both_weight_contributions(seed):
    """Encoder and decoder share storage; backward must sum both gradients."""
    rng = np.random.default_rng(seed)
    bank = _random_bank(rng, 2, 2, 3, Activation.TANH)
    enc, dec = TimeConv(bank), TiedDeconv(bank)
    x = rng.normal(size=(1, 3, 8))

    bank.weights.zero_grad()
    recon = dec.forward(enc.forward(x))
    _, d_recon = _msre_batch(recon, x)
    enc.backward(dec.backward(d_recon))
    analytic = bank.weights.grad.copy()

    def f(values):
        probe = ConvFilterBank(values, Activation.TANH)
        recon = TiedDeconv(probe).forward(TimeConv(probe).forward(x))
        loss, _ = _msre_batch(recon, x)
        return loss

    assert_grad_close(analytic, numerical_grad(f, bank.weights.value))


@pytest.mark.parametrize("seed", SEEDS)
def test_hinge_loss_gradient(seed):
    rng = np.random.default_rng(seed)
    while True:  # keep margins away from the hinge kink for clean differences
        scores = rng.normal(0.0, 2.0, size=6)
        target = int(rng.integers(6))
        margins = 1.0 - (scores[target] - scores)
        margins[target] = 1.0
        if np.abs(margins - 0.0).min() > 0.05 and np.abs(margins).min() > 0.05:
            break
    _, analytic = l2svm_loss(scores, target)
    numeric = numerical_grad(lambda s: l2svm_loss(s, target)[0], scores)
    assert_grad_close(analytic, numeric)


@pytest.mark.parametrize("seed", SEEDS)
def test_softmax_nll_gradient(seed):
    rng = np.random.default_rng(seed)
    scores = rng.normal(size=5)
    _, analytic = softmax_nll(scores, 0)
    assert_grad_close(analytic,
                      numerical_grad(lambda s: softmax_nll(s, 0)[0], scores))


@pytest.mark.parametrize("seed", SEEDS)
def test_cross_trial_dot_loss_gradient(seed):
    rng = np.random.default_rng(seed)
    recon = rng.normal(size=(2, 3, 7))
    target = rng.normal(size=(2, 3, 7))
    _, analytic = _neg_dot_batch(recon, target)
    numeric = numerical_grad(lambda r: _neg_dot_batch(r, target)[0], recon)
    assert_grad_close(analytic, numeric)


@pytest.mark.parametrize("seed", SEEDS)
def test_msre_loss_gradient(seed):
    rng = np.random.default_rng(seed)
    recon = rng.normal(size=(2, 3, 7))
    target = rng.normal(size=(2, 3, 7))
    _, analytic = _msre_batch(recon, target)
    assert_grad_close(analytic,
                      numerical_grad(lambda r: _msre_batch(r, target)[0], recon))


@pytest.mark.parametrize("seed", SEEDS)
def test_dense_output_gradients(seed):
    rng = np.random.default_rng(seed)
    layer = DenseOutput(rng.normal(size=(6, 4)), rng.normal(size=4))
    x = rng.normal(size=(2, 6))
    targets = rng.integers(4, size=2)

    layer.weights.zero_grad()
    layer.biases.zero_grad()
    scores = layer.forward(x)
    _, d_scores = _softmax_nll_batch(scores, 0)
    layer.backward(d_scores)

    def f_w(values):
        probe = DenseOutput(values, layer.biases.value)
        return _softmax_nll_batch(probe.forward(x), 0)[0]

    def f_b(values):
        probe = DenseOutput(layer.weights.value, values)
        return _softmax_nll_batch(probe.forward(x), 0)[0]

    assert_grad_close(layer.weights.grad, numerical_grad(f_w, layer.weights.value))
    assert_grad_close(layer.biases.grad, numerical_grad(f_b, layer.biases.value))
    del targets


class TestModelBackward:
    def _build(self, rng, n=10):
        """Every layer type: conv(tanh) -> dropout(off) -> strided conv ->
        flatten -> affine output."""
        bank1 = _random_bank(rng, 2, 3, 3, Activation.TANH)
        bank2 = _random_bank(rng, 2, 2, 2, Activation.TANH)
        conv1 = TimeConv(bank1)
        conv2 = TimeConv(bank2, stride=2)
        _, m1 = conv1.out_shape(n)
        k2, m2 = conv2.out_shape(m1)
        out = DenseOutput(rng.normal(0.0, 0.3, size=(k2 * m2, 4)),
                          rng.normal(size=4))
        return Model([conv1, Dropout(0.5, seed=0), conv2, Flatten(), out])

    def _loss(self, model, x, y):
        scores = model.forward(x, training=False)  # dropout-off path
        return _l2svm_batch(scores, y)

    @pytest.mark.parametrize("seed", SEEDS)
    def test_full_stack_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        model = self._build(rng)
        x = rng.normal(size=(3, 3, 10))
        y = rng.integers(4, size=3)

        model.zero_grad()
        _, d_scores = self._loss(model, x, y)
        model.backward(d_scores)
        analytic = [p.grad.copy() for p in model.params()]

        for p, a in zip(model.params(), analytic):
            original = p.value.copy()

            def f(values, p=p):
                p.value[...] = values
                loss, _ = self._loss(model, x, y)
                return loss

            numeric = numerical_grad(f, original)
            p.value[...] = original
            assert_grad_close(a, numeric)

    def test_hand_derived_width1_linear_msre_gradient(self):
        # recon = w*x for one sample; d/dw (w*x - t)^2 = 2*(w*x - t)*x
        w0, x0, t0 = 1.7, 0.8, -0.4
        bank = ConvFilterBank(np.array([[[w0]]]), Activation.LINEAR)
        layer = TimeConv(bank)
        x = np.array([[[x0]]])
        bank.weights.zero_grad()
        recon = layer.forward(x)
        _, d = _msre_batch(recon, np.array([[[t0]]]))
        layer.backward(d)
        expected = 2.0 * (w0 * x0 - t0) * x0
        assert bank.weights.grad[0, 0, 0] == pytest.approx(expected, rel=1e-12)

    def test_zero_upstream_gradient_gives_zero_parameter_gradients(self, rng):
        model = self._build(rng)
        x = rng.normal(size=(2, 3, 10))
        model.zero_grad()
        scores = model.forward(x)
        model.backward(np.zeros_like(scores))
        for p in model.params():
            np.testing.assert_array_equal(p.grad, 0.0)

    def test_backward_before_forward_is_state_error(self, rng):
        model = self._build(rng)
        with pytest.raises(RuntimeError, match="before forward"):
            model.backward(np.zeros((2, 4)))

    def test_gradients_accumulate_by_summation(self, rng):
        model = self._build(rng)
        x1 = rng.normal(size=(2, 3, 10))
        x2 = rng.normal(size=(2, 3, 10))
        y = rng.integers(4, size=2)

        def grads_for(batches):
            model.zero_grad()
            for xb in batches:
                _, d = self._loss(model, xb, y)
                model.backward(d)
            return [p.grad.copy() for p in model.params()]

        separate = [a + b for a, b in zip(grads_for([x1]), grads_for([x2]))]
        together = grads_for([x1, x2])
        for s, t in zip(separate, together):
            np.testing.assert_allclose(s, t, atol=1e-10)
