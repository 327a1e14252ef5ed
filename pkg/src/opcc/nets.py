"""Small fully-connected networks with hand-written backprop (float64 numpy).

Hidden layers use the smooth swish activation x * sigmoid(x); outputs are
linear. Two training losses are provided, each returning (loss, grad wrt the
network output): plain mean squared error, and a diagonal Gaussian negative
log-likelihood whose log-variance head is softly clamped into a fixed
interval (softplus on both ends, so the loss stays bounded below and smooth
everywhere - no kinks to trip finite-difference checks).
"""

from __future__ import annotations

import math

import numpy as np

__all__ = ["MLP", "mse_loss", "gaussian_nll_loss", "Adam", "LOG_2PI"]

LOG_2PI = math.log(2.0 * math.pi)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softplus(z):
    return np.log1p(np.exp(-np.abs(z))) + np.maximum(z, 0.0)


def swish(z):
    return z * _sigmoid(z)


def swish_grad(z):
    s = _sigmoid(z)
    return s * (1.0 + z * (1.0 - s))


class MLP:
    """Feed-forward net; params live in ``weights``/``biases`` lists."""

    def __init__(self, sizes: list[int], rng: np.random.Generator):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.sizes = list(sizes)
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            scale = 1.0 / math.sqrt(fan_in)
            self.weights.append(rng.normal(0.0, scale, size=(fan_in, fan_out)))
            self.biases.append(rng.normal(0.0, 0.1, size=fan_out))

    def forward(self, x: np.ndarray, want_cache: bool = False):
        """x: [B, in] -> output [B, out]; optionally keeps pre-activations."""
        pre = []
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            if i < last:
                pre.append((h, z))
                h = swish(z)
            else:
                pre.append((h, z))
                h = z
        if want_cache:
            return h, pre
        return h

    def backward(self, cache, d_out: np.ndarray):
        """Gradients of a scalar loss wrt params, given d loss / d output."""
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        delta = d_out
        last = len(self.weights) - 1
        for i in range(last, -1, -1):
            h_in, z = cache[i]
            if i < last:
                delta = delta * swish_grad(z)
            grads_w[i] = h_in.T @ delta
            grads_b[i] = delta.sum(axis=0)
            if i > 0:
                delta = delta @ self.weights[i].T
        return grads_w, grads_b

    # flat-vector access (finite-difference checks, checkpoints)
    def get_flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    def set_flat(self, vec: np.ndarray) -> None:
        pos = 0
        for i in range(len(self.weights)):
            for arr in (self.weights[i], self.biases[i]):
                n = arr.size
                arr[...] = vec[pos:pos + n].reshape(arr.shape)
                pos += n
        if pos != vec.size:
            raise ValueError(f"flat vector has {vec.size} entries, expected {pos}")

    def copy_params(self):
        return [w.copy() for w in self.weights], [b.copy() for b in self.biases]

    def set_params(self, params) -> None:
        ws, bs = params
        for w, src in zip(self.weights, ws):
            w[...] = src
        for b, src in zip(self.biases, bs):
            b[...] = src


def mse_loss(pred: np.ndarray, target: np.ndarray):
    """Mean squared error over all entries; returns (loss, d loss / d pred)."""
    diff = pred - target
    loss = float(np.mean(diff * diff))
    return loss, 2.0 * diff / diff.size


def _soft_clamp(raw, lo, hi):
    u = hi - _softplus(hi - raw)
    v = lo + _softplus(u - lo)
    dv = _sigmoid(u - lo) * _sigmoid(hi - raw)
    return v, dv


def gaussian_nll_loss(out: np.ndarray, target: np.ndarray, logvar_clamp: tuple[float, float]):
    """Diagonal Gaussian NLL; ``out`` stacks [means, raw log-variances].

    Log-variances are soft-clamped into ``logvar_clamp`` before use, which
    bounds the loss below on any finite data. Returns (mean NLL, d/d out).
    """
    d = target.shape[1]
    if out.shape[1] != 2 * d:
        raise ValueError(f"output width {out.shape[1]} != 2 * target width {d}")
    lo, hi = logvar_clamp
    mu = out[:, :d]
    logvar, dlogvar_draw = _soft_clamp(out[:, d:], lo, hi)
    inv_var = np.exp(-logvar)
    sq = (target - mu) ** 2
    nll = 0.5 * (LOG_2PI + logvar + sq * inv_var)
    loss = float(np.mean(nll))
    w = 1.0 / nll.size
    d_out = np.empty_like(out)
    d_out[:, :d] = (mu - target) * inv_var * w
    d_out[:, d:] = 0.5 * (1.0 - sq * inv_var) * dlogvar_draw * w
    return loss, d_out


def soft_clamp(raw, lo, hi):
    """Value of the soft log-variance clamp (without its derivative)."""
    return _soft_clamp(raw, lo, hi)[0]


class Adam:
    """Adam over an MLP's parameter lists; deterministic given the updates."""

    def __init__(self, net: MLP, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.net = net
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m_w = [np.zeros_like(w) for w in net.weights]
        self.v_w = [np.zeros_like(w) for w in net.weights]
        self.m_b = [np.zeros_like(b) for b in net.biases]
        self.v_b = [np.zeros_like(b) for b in net.biases]

    def step(self, grads_w, grads_b) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** self.t
        corr2 = 1.0 - b2 ** self.t
        for i, g in enumerate(grads_w):
            self.m_w[i] = b1 * self.m_w[i] + (1 - b1) * g
            self.v_w[i] = b2 * self.v_w[i] + (1 - b2) * g * g
            self.net.weights[i] -= self.lr * (self.m_w[i] / corr1) / (np.sqrt(self.v_w[i] / corr2) + self.eps)
        for i, g in enumerate(grads_b):
            self.m_b[i] = b1 * self.m_b[i] + (1 - b1) * g
            self.v_b[i] = b2 * self.v_b[i] + (1 - b2) * g * g
            self.net.biases[i] -= self.lr * (self.m_b[i] / corr1) / (np.sqrt(self.v_b[i] / corr2) + self.eps)
