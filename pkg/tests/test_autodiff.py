import numpy as np
import pytest

from kinetic_storage import autodiff as ad
from kinetic_storage.errors import DetachedNode


def fd_grad(f, x, h=1e-5):
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def test_square():
    val, (g,) = ad.value_and_grad(lambda t: t * t, 3.0)
    assert val == 9.0 and g == 6.0


def test_sine_at_zero():
    _, (g,) = ad.value_and_grad(ad.sin, 0.0)
    assert g == 1.0


def composite(w, b, x):
    h = ad.tanh(x @ w + b)
    return ad.vsum(ad.exp(ad.sin(h) * 0.5) + ad.log(1.0 + h * h) + ad.sqrt(h * h + 1.0) / (2.0 + ad.cos(h)))


def test_gradient_against_finite_differences():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(7, 3))
    w0, b0 = rng.normal(size=(3, 4)), rng.normal(size=4)
    _, (gw, gb) = ad.value_and_grad(lambda w, b: composite(w, b, x), w0, b0)
    assert np.allclose(gw, fd_grad(lambda w: composite(w, b0, x), w0), rtol=1e-6, atol=1e-8)
    assert np.allclose(gb, fd_grad(lambda b: composite(w0, b, x), b0), rtol=1e-6, atol=1e-8)


def test_input_derivative_of_square():
    val, der = ad.input_jacobian(lambda d: d * d, np.array([2.0]), [0])
    assert val[0] == 4.0 and der[0, 0] == 4.0


def test_linear_layer_input_gradient():
    w = np.array([[0.3], [-1.2], [2.5]])
    _, der = ad.input_jacobian(lambda d: d @ w, np.array([[0.1, 0.2, 0.3]]), [0, 1, 2])
    assert np.array_equal(der[:, 0, 0], w[:, 0])


def test_second_order_composite():
    rng = np.random.default_rng(1)
    for v, theta in rng.normal(size=(50, 2)):
        with ad.Tape() as tape:
            th = tape.variable(theta)
            _, dv = ad.input_jacobian(lambda d: th * ad.sin(d), np.array([v]), [0])
            (g,) = tape.gradient(ad.vsum(dv), [th])
        assert g == pytest.approx(np.cos(v), abs=1e-10)


def test_forward_over_reverse_against_nested_fd():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(5, 2))
    w1, w2 = rng.normal(size=(2, 3)), rng.normal(size=(3, 1))

    def du_dv_sq(w1_, w2_, xx, h=None):
        if h is None:
            _, dv = ad.input_jacobian(lambda d: ad.sin(d @ w1_) @ w2_, xx, [0])
            return ad.vsum(dv * dv)
        f = lambda z: np.sin(z @ w1_) @ w2_
        e = np.zeros_like(xx)
        e[:, 0] = h
        d = (f(xx + e) - f(xx - e)) / (2 * h)
        return float(np.sum(d * d))

    with ad.Tape() as tape:
        a, b = tape.variable(w1), tape.variable(w2)
        ga, gb = tape.gradient(du_dv_sq(a, b, x), [a, b])
    fa = fd_grad(lambda w: du_dv_sq(w, w2, x, h=1e-4), w1, h=1e-4)
    fb = fd_grad(lambda w: du_dv_sq(w1, w, x, h=1e-4), w2, h=1e-4)
    assert np.allclose(ga, fa, rtol=1e-4, atol=1e-6)
    assert np.allclose(gb, fb, rtol=1e-4, atol=1e-6)


def test_linearity_of_gradients():
    rng = np.random.default_rng(3)
    p = rng.normal(size=4)
    f = lambda t: ad.vsum(ad.sin(t) * t)
    g = lambda t: ad.vsum(ad.exp(t * 0.3))
    _, (gf,) = ad.value_and_grad(f, p)
    _, (gg,) = ad.value_and_grad(g, p)
    _, (gs,) = ad.value_and_grad(lambda t: 2.0 * f(t) - 0.5 * g(t), p)
    assert np.allclose(gs, 2.0 * gf - 0.5 * gg, rtol=1e-14, atol=1e-15)


def test_replay_is_bit_identical():
    rng = np.random.default_rng(4)
    x, w = rng.normal(size=(6, 3)), rng.normal(size=(3, 2))
    f = lambda ww: ad.vsum(ad.sin(x @ ww) ** 2.0)
    assert np.array_equal(ad.value_and_grad(f, w)[1][0], ad.value_and_grad(f, w)[1][0])


def test_backward_touches_each_node_once():
    calls = []
    with ad.Tape() as tape:
        a = tape.variable(2.0)
        b = a * a
        c = b + a
        node = ad.Var(c.value, [(c, lambda g: (calls.append(1), g)[1])], tape)
        tape.gradient(node, [a])
    assert len(calls) == 1


def test_unreached_leaf_gets_zero():
    with ad.Tape() as tape:
        a, b = tape.variable(1.5), tape.variable(np.ones(3))
        ga, gb = tape.gradient(a * 2.0, [a, b])
    assert ga == 2.0 and np.all(gb == 0)


def test_detached_loss():
    with ad.Tape() as t1:
        a = t1.variable(1.0)
        foreign = a * 2.0
    with ad.Tape() as t2:
        b = t2.variable(1.0)
        with pytest.raises(DetachedNode):
            t2.gradient(foreign, [a])
        with pytest.raises(DetachedNode):
            t2.gradient(b * 1.0, [a])
    with pytest.raises(DetachedNode):
        ad.grad_params(np.float64(1.0), [a])


def test_abs_kink_and_clamps():
    _, (g,) = ad.value_and_grad(lambda t: ad.vsum(ad.abs(t)), np.array([-2.0, 0.0, 3.0]))
    assert np.array_equal(g, [-1.0, 0.0, 1.0])
    _, (g,) = ad.value_and_grad(lambda t: ad.vsum(ad.maximum(t, 0.0)), np.array([-1.0, 2.0]))
    assert np.array_equal(g, [0.0, 1.0])


def test_dual_chain_rule_primitives():
    x = np.array([[0.4, 1.3]])
    for fn, dfn in [(ad.exp, np.exp), (ad.log, lambda z: 1 / z), (ad.cos, lambda z: -np.sin(z)),
                    (lambda z: z ** 3.0, lambda z: 3 * z**2), (lambda z: 1.0 / z, lambda z: -1 / z**2)]:
        _, der = ad.input_jacobian(fn, x, [0, 1])
        assert der[0, 0, 0] == pytest.approx(dfn(0.4))
        assert der[1, 0, 1] == pytest.approx(dfn(1.3))
