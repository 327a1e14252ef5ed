import math

import numpy as np
import pytest

from opcc.nets import LOG_2PI, MLP, Adam, gaussian_nll_loss, mse_loss, soft_clamp


def flat_grads(net, grads_w, grads_b):
    return np.concatenate([a.ravel() for pair in zip(grads_w, grads_b) for a in pair])


def fd_gradient(net, loss_fn, h=1e-6):
    """Central finite differences of loss_fn() wrt the flat parameter vector."""
    theta = net.get_flat()
    grad = np.empty_like(theta)
    for k in range(len(theta)):
        bump = np.zeros_like(theta)
        bump[k] = h
        net.set_flat(theta + bump)
        up = loss_fn()
        net.set_flat(theta - bump)
        down = loss_fn()
        grad[k] = (up - down) / (2 * h)
    net.set_flat(theta)
    return grad


def relative_error(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


def check_gradients(seed, loss_kind):
    rng = np.random.default_rng(seed)
    d_in, d_target = int(rng.integers(2, 5)), int(rng.integers(1, 4))
    d_out = d_target if loss_kind == "mse" else 2 * d_target
    net = MLP([d_in, 8, 8, d_out], rng)
    x = rng.normal(size=(10, d_in))
    t = rng.normal(size=(10, d_target))

    def loss_only():
        out = net.forward(x)
        if loss_kind == "mse":
            return mse_loss(out, t)[0]
        return gaussian_nll_loss(out, t, (-10.0, 0.5))[0]

    out, cache = net.forward(x, want_cache=True)
    if loss_kind == "mse":
        _, d_out_grad = mse_loss(out, t)
    else:
        _, d_out_grad = gaussian_nll_loss(out, t, (-10.0, 0.5))
    gw, gb = net.backward(cache, d_out_grad)
    analytic = flat_grads(net, gw, gb)
    numeric = fd_gradient(net, loss_only)
    return relative_error(analytic, numeric)


def test_mse_gradients_match_finite_differences():
    for seed in range(10):
        assert check_gradients(seed, "mse") <= 1e-4


def test_nll_gradients_match_finite_differences():
    for seed in range(10):
        assert check_gradients(100 + seed, "nll") <= 1e-4


def test_mse_loss_value():
    pred = np.array([[1.0, 2.0], [3.0, 5.0]])
    target = np.array([[0.0, 2.0], [3.0, 1.0]])
    loss, grad = mse_loss(pred, target)
    assert loss == pytest.approx((1.0 + 0.0 + 0.0 + 16.0) / 4)
    assert np.allclose(grad, 2 * (pred - target) / 4)


def test_nll_matches_direct_formula_inside_clamp():
    # with generous clamp bounds the soft clamp is inert to ~1e-9
    rng = np.random.default_rng(0)
    mu = rng.normal(size=(5, 2))
    logvar = rng.uniform(-1.0, 0.4, size=(5, 2))
    target = rng.normal(size=(5, 2))
    out = np.concatenate([mu, logvar], axis=1)
    loss, _ = gaussian_nll_loss(out, target, (-30.0, 30.0))
    direct = 0.5 * (LOG_2PI + logvar + (target - mu) ** 2 * np.exp(-logvar))
    assert loss == pytest.approx(float(direct.mean()), abs=1e-8)


def test_nll_bounded_below_by_clamp_floor():
    lo, hi = -10.0, 0.5
    rng = np.random.default_rng(1)
    floor = 0.5 * (LOG_2PI + lo) - 1e-6
    for _ in range(50):
        out = rng.normal(scale=50.0, size=(8, 6))  # wild raw outputs
        target = rng.normal(scale=10.0, size=(8, 3))
        loss, grad = gaussian_nll_loss(out, target, (lo, hi))
        assert math.isfinite(loss)
        assert loss >= floor
        assert np.isfinite(grad).all()


def test_soft_clamp_bounds():
    lo, hi = -10.0, 0.5
    raw = np.linspace(-100, 100, 2001)
    v = soft_clamp(raw, lo, hi)
    assert (v >= lo).all()
    assert (v <= hi + 1e-3).all()
    assert (np.diff(v) >= 0).all()
    # strictly increasing away from float saturation: no gradient dead zone
    mid = (raw > -30) & (raw < 30)
    assert (np.diff(v[mid]) > 0).all()
    # near-identity in the middle of the interval
    assert soft_clamp(np.array([-5.0]), lo, hi)[0] == pytest.approx(-5.0, abs=0.01)


def test_forward_shapes_and_flat_roundtrip():
    rng = np.random.default_rng(2)
    net = MLP([3, 16, 16, 5], rng)
    x = rng.normal(size=(7, 3))
    y = net.forward(x)
    assert y.shape == (7, 5)
    theta = net.get_flat()
    net2 = MLP([3, 16, 16, 5], np.random.default_rng(99))
    net2.set_flat(theta)
    assert np.array_equal(net2.get_flat(), theta)
    assert np.array_equal(net2.forward(x), y)
    with pytest.raises(ValueError):
        net2.set_flat(theta[:-1])


def test_adam_is_deterministic():
    def run():
        rng = np.random.default_rng(3)
        net = MLP([2, 8, 1], rng)
        opt = Adam(net, lr=1e-2)
        x = rng.normal(size=(32, 2))
        t = (x[:, :1] * 2 - x[:, 1:]) ** 2
        for _ in range(20):
            out, cache = net.forward(x, want_cache=True)
            _, d_out = mse_loss(out, t)
            opt.step(*net.backward(cache, d_out))
        return net.get_flat()

    assert np.array_equal(run(), run())


def test_adam_reduces_loss():
    rng = np.random.default_rng(4)
    net = MLP([2, 16, 1], rng)
    opt = Adam(net, lr=3e-3)
    x = rng.normal(size=(128, 2))
    t = x[:, :1] + 0.5 * x[:, 1:]
    first = mse_loss(net.forward(x), t)[0]
    for _ in range(200):
        out, cache = net.forward(x, want_cache=True)
        _, d_out = mse_loss(out, t)
        opt.step(*net.backward(cache, d_out))
    assert mse_loss(net.forward(x), t)[0] < 0.05 * first
