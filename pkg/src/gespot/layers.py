"""Differentiable tensor primitives for the recognition network.

Each primitive returns (output, cache); the matching *_backward consumes the
upstream gradient and the cache and returns gradients in input order. The
network is a small fixed DAG, so explicit forward/backward pairs stay
readable and keep reductions in a deterministic order, which the trainer
relies on for bit-reproducible runs and for the gating guarantee (inactive
heads contribute exactly zero, not merely something small).

Sequence tensors are (batch, channels, time). Dense tensors are
(batch, features). Dtypes are preserved end to end: float32 for training,
float64 for the finite-difference checks.
"""

import numpy as np


def conv1d(x, w, b, stride=1):
    """Temporal convolution with odd kernel and same padding.

    x: (B, Cin, T), w: (Cout, Cin, K), b: (Cout,). Output (B, Cout, ceil(T/s)).
    Striding slices the stride-1 output, which matches a strided convolution
    with the same taps.
    """
    k = w.shape[2]
    if k % 2 != 1:
        raise ValueError(f"kernel width must be odd, got {k}")
    p = (k - 1) // 2
    t = x.shape[2]
    xp = np.pad(x, ((0, 0), (0, 0), (p, p)))
    out = np.zeros((x.shape[0], w.shape[0], t), dtype=x.dtype)
    for j in range(k):
        out += np.einsum("bct,oc->bot", xp[:, :, j:j + t], w[:, :, j],
                         optimize=True)
    out += b[None, :, None]
    if stride > 1:
        out = out[:, :, ::stride]
    return out, (xp, w, stride, t)


def conv1d_backward(grad, cache):
    xp, w, stride, t = cache
    k = w.shape[2]
    p = (k - 1) // 2
    if stride > 1:
        full = np.zeros((grad.shape[0], grad.shape[1], t), dtype=grad.dtype)
        full[:, :, ::stride] = grad
        grad = full
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    for j in range(k):
        dw[:, :, j] = np.einsum("bot,bct->oc", grad, xp[:, :, j:j + t],
                                optimize=True)
        dxp[:, :, j:j + t] += np.einsum("bot,oc->bct", grad, w[:, :, j],
                                        optimize=True)
    db = grad.sum(axis=(0, 2))
    dx = dxp[:, :, p:p + t] if p else dxp
    return dx, dw, db


def relu(x):
    out = np.maximum(x, 0)
    return out, (x > 0)


def relu_backward(grad, cache):
    return grad * cache


def adaptive_avg_pool1d(x, out_len):
    """Average pooling to a fixed output length.

    Bin i averages input positions [floor(i*T/O), ceil((i+1)*T/O)); bins may
    overlap when O does not divide T, including the upsampling case O > T.
    """
    t = x.shape[2]
    bounds = [(i * t // out_len, -((-(i + 1) * t) // out_len))
              for i in range(out_len)]
    cols = [x[:, :, s:e].mean(axis=2) for s, e in bounds]
    out = np.stack(cols, axis=2)
    return out, (t, bounds)


def adaptive_avg_pool1d_backward(grad, cache):
    t, bounds = cache
    dx = np.zeros(grad.shape[:2] + (t,), dtype=grad.dtype)
    for i, (s, e) in enumerate(bounds):
        dx[:, :, s:e] += grad[:, :, i:i + 1] / (e - s)
    return dx


def global_avg_pool(x):
    """(B, C, T) -> (B, C) temporal mean."""
    return x.mean(axis=2), (x.shape[2],)


def global_avg_pool_backward(grad, cache):
    (t,) = cache
    return np.repeat(grad[:, :, None], t, axis=2) / t


def dense(x, w, b):
    """x: (B, F), w: (O, F), b: (O,) -> (B, O)."""
    return x @ w.T + b, (x, w)


def dense_backward(grad, cache):
    x, w = cache
    return grad @ w, grad.T @ x, grad.sum(axis=0)


def softmax_cross_entropy(logits, targets):
    """Per-sample cross-entropy from raw logits.

    logits: (B, K), targets: (B,) int. Returns (losses (B,), cache). The
    log-sum-exp shift keeps the computation stable for large margins.
    """
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    denom = ez.sum(axis=1)
    probs = ez / denom[:, None]
    b = np.arange(logits.shape[0])
    losses = np.log(denom) - z[b, targets]
    return losses, (probs, targets)


def softmax_cross_entropy_backward(coeff, cache):
    """d(sum_b coeff_b * loss_b)/dlogits, coeff: (B,)."""
    probs, targets = cache
    g = probs * coeff[:, None]
    b = np.arange(probs.shape[0])
    g[b, targets] -= coeff
    return g


def mse(pred, target):
    """Per-sample squared error for scalar predictions: (B,) each."""
    d = pred - target
    return d * d, (d,)


def mse_backward(coeff, cache):
    (d,) = cache
    return 2.0 * coeff * d


def sigmoid_cross_entropy(logits, targets):
    """Per-sample binary cross-entropy from raw logits; targets in {0, 1}."""
    z = logits
    losses = np.maximum(z, 0) - z * targets + np.log1p(np.exp(-np.abs(z)))
    sig = 1.0 / (1.0 + np.exp(-z))
    return losses, (sig, targets)


def sigmoid_cross_entropy_backward(coeff, cache):
    sig, targets = cache
    return coeff * (sig - targets)
