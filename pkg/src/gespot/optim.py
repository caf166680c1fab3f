"""Optimizers for the training loop.

Adafactor follows the published update rule: factored second moments for
matrix-shaped parameters (row/column sums of the squared gradient), decay
beta2_t = 1 - t^-0.8, update clipped to unit RMS, no momentum. Tensors with
more than two dimensions are factored as (dim0, rest). Adam is the plain
adaptive fallback.

Both are deterministic given the gradient stream, and both update parameter
arrays in place under the trainer's single-writer contract.
"""

import numpy as np

from .errors import ConfigError


def _rms(x):
    return np.sqrt(np.mean(np.square(x)))


class Adafactor:
    def __init__(self, lr=0.004, eps1=1e-30, eps2=1e-3, clip_d=1.0,
                 decay_exponent=0.8, scale_parameter=False):
        self.lr = lr
        self.eps1 = eps1
        self.eps2 = eps2
        self.clip_d = clip_d
        self.decay_exponent = decay_exponent
        self.scale_parameter = scale_parameter
        self.t = 0
        self.state = {}

    def step(self, arrays, grads):
        self.t += 1
        beta2 = 1.0 - self.t ** (-self.decay_exponent)
        for name, g in grads.items():
            x = arrays[name]
            # second-moment state in float64: the factored row/column sums
            # multiply tiny magnitudes that underflow in float32
            g = g.astype(np.float64, copy=False)
            g2 = np.square(g) + self.eps1
            st = self.state.get(name)
            if x.ndim >= 2:
                mat = g2.reshape(g2.shape[0], -1)
                if st is None:
                    st = {"r": np.zeros(mat.shape[0]),
                          "c": np.zeros(mat.shape[1])}
                    self.state[name] = st
                st["r"] = beta2 * st["r"] + (1.0 - beta2) * mat.sum(axis=1)
                st["c"] = beta2 * st["c"] + (1.0 - beta2) * mat.sum(axis=0)
                denom = np.sqrt(st["r"])[:, None] * np.sqrt(st["c"])[None, :]
                u = g.reshape(mat.shape) * np.sqrt(st["r"].sum()) / denom
                u = u.reshape(x.shape)
            else:
                if st is None:
                    st = {"v": np.zeros(x.shape)}
                    self.state[name] = st
                st["v"] = beta2 * st["v"] + (1.0 - beta2) * g2
                u = g / np.sqrt(st["v"])
            u = u / max(1.0, _rms(u) / self.clip_d)
            alpha = self.lr
            if self.scale_parameter:
                alpha = self.lr * max(self.eps2, _rms(x))
            x -= (alpha * u).astype(x.dtype, copy=False)


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.state = {}

    def step(self, arrays, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, g in grads.items():
            x = arrays[name]
            g = g.astype(x.dtype, copy=False)
            st = self.state.get(name)
            if st is None:
                st = {"m": np.zeros_like(x), "v": np.zeros_like(x)}
                self.state[name] = st
            st["m"] = b1 * st["m"] + (1.0 - b1) * g
            st["v"] = b2 * st["v"] + (1.0 - b2) * np.square(g)
            mhat = st["m"] / bc1
            vhat = st["v"] / bc2
            x -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(
                x.dtype, copy=False)


def make_optimizer(name, lr=None):
    if name == "adafactor":
        return Adafactor(lr=lr if lr is not None else 0.004)
    if name == "adam":
        return Adam(lr=lr if lr is not None else 1e-3)
    raise ConfigError(f"unknown optimizer {name!r}")
