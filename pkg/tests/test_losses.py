import math

import numpy as np
import pytest

from pcnn.losses import (LossBreakdown, cross_entropy, grad_C, grad_C_proj, grad_C_task, grad_W, grad_W_proj,
                         grad_W_task, layer_projection_loss, projection_loss, sgd_update)
from pcnn.proj_conv import LayerCache, ProjConv
from pcnn.projection import DiscreteSet

import checks
import oracles


def _scalar_layer(c=0.3, w=1.0):
    layer = ProjConv(1, 1, k=1, J=1)
    layer.C.value = np.array([[[[c]]]])
    layer.W.value = np.array([[[w]]])
    om = DiscreteSet((-0.5, 0.5))
    chat = np.array([[[[[0.5]]]]])
    wex = np.array([[[[w]]]])
    return layer, LayerCache(None, None, om, wex, wex, chat, (1, 1, 1, 1))


def test_scalar_projection_loss():
    layer, cache = _scalar_layer()
    d = np.ones_like(cache.chat)
    assert math.isclose(layer_projection_loss(layer.C.value, cache.w_exact, cache.chat, d, 0.0, 1.0), 0.02)
    assert math.isclose(layer_projection_loss(layer.C.value, cache.w_exact, cache.chat, d, 0.1, 1.0), 0.005)
    exact = cache.w_exact[:, None] * (layer.C.value[None] + 0.1 * d)
    assert layer_projection_loss(layer.C.value, cache.w_exact, exact, d, 0.1, 1.0) == 0.0


def test_scalar_gradients():
    layer, cache = _scalar_layer()
    d = np.ones_like(cache.chat)
    assert math.isclose(grad_C_proj(layer, cache, d, 0.1, 1.0).item(), -0.1)
    assert math.isclose(grad_W_proj(layer, cache, d, 0.1, 1.0).item(), -0.04)


def test_projection_loss_needs_cache():
    layer = ProjConv(1, 1)
    with pytest.raises(RuntimeError):
        projection_loss([layer], 0.1, 1.0)


def test_indicator_kills_chain_term():
    layer, cache = _scalar_layer(c=3.0, w=1.0)
    d = np.ones_like(cache.chat)
    assert grad_C(layer, cache, d, 0.1, 0.0).item() == 0.0


def test_zero_kernels_zero_grad_w_proj():
    layer = ProjConv(2, 2, J=2)
    layer.C.value = np.zeros_like(layer.C.value)
    om = DiscreteSet.binary(1.0)
    chat = np.ones((2, 2, 2, 3, 3), np.float32)
    wex = np.stack([np.broadcast_to(w, (2, 3, 3)) for w in layer.W.value])
    cache = LayerCache(None, None, om, wex, wex, chat, None)
    assert not grad_W_proj(layer, cache, np.zeros_like(chat), 0.1, 1.0).any()


@pytest.mark.parametrize("seed", range(6))
def test_ste_terms_vs_loop_transcription(seed):
    rng = np.random.default_rng(seed)
    I, cin, k, J = (int(v) for v in rng.integers(1, 4, size=4))
    layer = ProjConv(cin, I, k=k, J=J)
    layer.C.value = rng.uniform(-2, 2, (I, cin, k, k))
    layer.W.value = rng.uniform(-1.5, 1.5, (J, k, k))
    wex = np.stack([np.broadcast_to(w, (cin, k, k)) for w in layer.W.value])
    cache = LayerCache(None, None, None, wex, None, None, None)
    d = rng.standard_normal((J, I, cin, k, k))
    np.testing.assert_allclose(grad_C_task(layer, cache, d), oracles.ste_grad_c_loops(layer.C.value, layer.W.value, d),
                               rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(grad_W_task(layer, cache, d), oracles.ste_grad_w_loops(layer.C.value, layer.W.value, d),
                               rtol=1e-12, atol=1e-12)


def test_projection_gradients_fd_small_batch():
    res = checks.projection_grad_instances(n=20, seed=99)
    assert res["ok"], res["detail"]


def test_lambda_zero_disables_projection_terms():
    rng = np.random.default_rng(0)
    layer = ProjConv(2, 2, J=2, rng=rng)
    x = rng.standard_normal((1, 4, 5, 5)).astype(np.float32)
    out = layer.forward(x)
    layer.backward(np.ones_like(out))
    c = layer.cache
    assert np.array_equal(grad_C(layer, c, c.d_chat, 0.1, 0.0), grad_C(layer, c, c.d_chat, 0.1, 0.0, False))
    assert np.array_equal(grad_W(layer, c, c.d_chat, 0.1, 0.0), grad_W(layer, c, c.d_chat, 0.1, 0.0, False))


def test_cross_entropy_examples():
    loss, g = cross_entropy(np.zeros((3, 4)), [0, 1, 2])
    assert math.isclose(loss, math.log(4), rel_tol=1e-12)
    assert np.allclose(g.sum(axis=1), 0)
    big, _ = cross_entropy(np.array([[100.0, 0.0, 0.0]]), [0])
    assert big < 1e-30
    with pytest.raises(ValueError):
        cross_entropy(np.zeros((1, 3)), [3])


def test_cross_entropy_fd():
    rng = np.random.default_rng(0)
    z = rng.standard_normal((5, 7))
    y = rng.integers(0, 7, 5)
    _, g = cross_entropy(z, y)
    fd = oracles.central_diff(lambda v: cross_entropy(v, y)[0], z)
    assert oracles.rel_err(g, fd) <= 1e-4


def test_loss_breakdown_total():
    assert LossBreakdown(1.0, 0.25, 1e-4).total == 1.25


def test_sgd_examples():
    p, _ = sgd_update(np.array(1.0), np.array(0.5), None, 0.1)
    assert math.isclose(p, 0.95)
    p, _ = sgd_update(np.array([1.0, 2.0]), np.zeros(2), None, 0.1)
    assert p.tolist() == [1.0, 2.0]


def test_sgd_momentum_unroll():
    m, lr, wd = 0.9, 0.1, 0.01
    p0, g1, g2 = 1.0, 0.5, -0.2
    p, v = sgd_update(np.array(p0), np.array(g1), None, lr, m, wd)
    p, v = sgd_update(p, np.array(g2), v, lr, m, wd)
    v1 = g1 + wd * p0
    p1 = p0 - lr * v1
    v2 = m * v1 + g2 + wd * p1
    assert p.item() == p1 - lr * v2 and v.item() == v2
