import numpy as np
import pytest

from tenet.layers import ConvPoolLayer, L1OutputLayer, SigmoidLayer, TemporalEmbeddingLayer
from tenet.numerics import SeededRng


def fd(f, x, eps=1e-6):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        old = x[i]
        x[i] = old + eps
        up = f()
        x[i] = old - eps
        down = f()
        x[i] = old
        g[i] = (up - down) / (2 * eps)
    return g


def check_layer(layer, a, out_fn):
    """Loss = <r, forward(a)>; compare analytic and numeric gradients."""
    r = np.random.default_rng(9).normal(size=np.size(out_fn(a)))
    loss = lambda: float(r @ np.ravel(out_fn(a)))
    loss()
    grads, delta_in = layer.backward(a, r)
    for name, p in layer.params.items():
        np.testing.assert_allclose(grads[name], fd(loss, p), atol=1e-7, err_msg=name)
    np.testing.assert_allclose(delta_in, fd(loss, a), atol=1e-7)


def test_te_ones_init_sums_neighbours():
    te = TemporalEmbeddingLayer(4, d_te=1)
    np.testing.assert_array_equal(te.forward([1, 2, 3, 4]), [3, 6, 9, 7])
    np.testing.assert_array_equal(te.mask[0], [0, 1, 1, 1])
    np.testing.assert_array_equal(te.mask[2], [1, 1, 1, 0])


def test_te_identity_init_is_identity():
    te = TemporalEmbeddingLayer(5, d_te=2, init="identity")
    x = np.arange(5.0)
    np.testing.assert_array_equal(te.forward(x), x)


def test_te_offset_direction():
    te = TemporalEmbeddingLayer(4, d_te=1, init="identity")
    te.params["w"][:] = 0
    te.params["w"][2] = te.mask[2]  # offset +1 pulls in the next element
    np.testing.assert_array_equal(te.forward([1, 2, 3, 4]), [2, 3, 4, 0])
    np.testing.assert_array_equal(te.offset_weights(1), te.mask[2])


def test_te_backward_matches_finite_differences():
    g = np.random.default_rng(1)
    te = TemporalEmbeddingLayer(7, d_te=2)
    te.params["w"] += g.normal(size=te.params["w"].shape) * te.mask
    te.params["b"] += g.normal(size=7)
    a = g.normal(size=7)
    check_layer(te, a, te.forward)


def test_te_gradient_zero_on_masked_slots():
    te = TemporalEmbeddingLayer(6, d_te=2)
    grads, _ = te.backward(np.ones(6), np.ones(6))
    assert np.all(grads["w"][te.mask == 0] == 0)


def test_te_batch_matches_single():
    te = TemporalEmbeddingLayer(6, d_te=1)
    X = np.random.default_rng(2).normal(size=(4, 6))
    np.testing.assert_allclose(te.forward_batch(X), np.array([te.forward(x) for x in X]))


def test_conv_pool_backward():
    g = np.random.default_rng(4)
    conv = ConvPoolLayer(9, 3, 3, SeededRng(0))
    conv.params["b"] += g.normal(size=3)
    a = g.normal(size=9)
    check_layer(conv, a, conv.forward)


def test_pool_ties_go_to_lower_index_and_odd_tail_dropped():
    conv = ConvPoolLayer(4, 1, 1)
    conv.params["filters"][:] = 1.0
    out = conv.forward([2.0, 2.0, 1.0, 3.0])
    np.testing.assert_allclose(out, np.tanh([2.0, 3.0]))
    np.testing.assert_array_equal(conv._argmax, [[0, 1]])
    odd = ConvPoolLayer(5, 1, 1)
    assert odd.pooled_len == 2


def test_conv_backward_before_forward():
    with pytest.raises(RuntimeError):
        ConvPoolLayer(6, 2, 3, SeededRng(0)).backward(np.zeros(6), np.zeros(4))


def test_conv_shape_errors():
    with pytest.raises(ValueError):
        ConvPoolLayer(3, 1, 4)
    conv = ConvPoolLayer(6, 2, 3, SeededRng(0))
    with pytest.raises(ValueError):
        conv.forward(np.zeros(5))


def test_conv_batch_matches_single():
    conv = ConvPoolLayer(12, 4, 5, SeededRng(3))
    X = np.random.default_rng(5).normal(size=(3, 12))
    np.testing.assert_allclose(conv.forward_batch(X), np.array([conv.forward(x) for x in X]), atol=1e-14)


def test_sigmoid_backward():
    g = np.random.default_rng(6)
    sig = SigmoidLayer(5, 3, SeededRng(1))
    a = g.normal(size=5)
    check_layer(sig, a, sig.forward)


def test_l1_output_subgradient():
    out = L1OutputLayer(3, lam=0.5)
    out.params["W"][:] = [1.0, 0.0, -2.0]
    a = np.array([1.0, 2.0, 3.0])
    grads, delta = out.backward(a, 1.0)
    err = (1.0 - 6.0) - 1.0
    np.testing.assert_allclose(grads["W"], a * err + 0.5 * np.array([1, 0, -1]))
    np.testing.assert_allclose(grads["b"], [err])
    np.testing.assert_allclose(delta, err * out.params["W"])
    assert out.cost(0.0, 1.0) == pytest.approx(0.5 + 0.5 * 3)


def test_l1_negative_lambda_rejected():
    with pytest.raises(ValueError):
        L1OutputLayer(3, lam=-1)


def test_init_ranges():
    conv = ConvPoolLayer(28, 20, 5, SeededRng(0))
    assert np.abs(conv.params["filters"]).max() <= np.sqrt(6 / 6)
    sig = SigmoidLayer(240, 12, SeededRng(0))
    assert np.abs(sig.params["W"]).max() <= np.sqrt(6 / 252)
