"""Stateless forward/backward primitives in the ``[B, C, T]`` layout.

These mirror the layer classes (which run channels-last) and are what the
gradient-check suite exercises directly.
"""
import numpy as np

from . import kernels


def _to_nlc(x):
    return np.ascontiguousarray(x.transpose(0, 2, 1))


def conv1d(x, w, b):
    """Zero-padded, stride-1 convolution. ``x[B, C_in, T]``, ``w[C_out, C_in, k]``."""
    B, c_in, T = x.shape
    c_out, c_in_w, k = w.shape
    if c_in != c_in_w or b.shape != (c_out,):
        raise ValueError(f"shape mismatch: input {x.shape}, kernels {w.shape}, bias {b.shape}")
    if k % 2 != 1:
        raise ValueError("kernel size must be odd")
    cols = kernels.im2col(_to_nlc(x), k).reshape(B * T, k * c_in)
    wmat = w.transpose(2, 1, 0).reshape(k * c_in, c_out)
    out = (cols @ wmat + b).reshape(B, T, c_out)
    return np.ascontiguousarray(out.transpose(0, 2, 1))


def conv1d_backward(x, w, grad):
    """Gradients ``(dx, dw, db)`` of :func:`conv1d` given ``grad[B, C_out, T]``."""
    B, c_in, T = x.shape
    c_out, _, k = w.shape
    g2 = _to_nlc(grad).reshape(B * T, c_out)
    cols = kernels.im2col(_to_nlc(x), k).reshape(B * T, k * c_in)
    wmat = w.transpose(2, 1, 0).reshape(k * c_in, c_out)
    dw = (cols.T @ g2).reshape(k, c_in, c_out).transpose(2, 1, 0)
    db = g2.sum(axis=0)
    dcols = (g2 @ wmat.T).reshape(B, T, k * c_in)
    dx = kernels.col2im(dcols, k, c_in).transpose(0, 2, 1)
    return np.ascontiguousarray(dx), np.ascontiguousarray(dw), db


def batchnorm1d(x, gamma, beta, training, running_mean, running_var, momentum=0.1, eps=1e-5):
    """Batch norm on ``x[B, C, T]`` with statistics over the B and T axes.

    Running statistics are updated in place in training mode. Returns the
    output and a cache for :func:`batchnorm1d_backward`.
    """
    B, C, T = x.shape
    x2 = _to_nlc(x).reshape(B * T, C)
    if training:
        if B * T < 2:
            raise ValueError("batch norm in training mode needs B*T >= 2")
        y, xhat, mean, var, invstd = kernels.bn_train_forward(x2, gamma, beta, eps)
        running_mean[...] = (1 - momentum) * running_mean + momentum * mean
        running_var[...] = (1 - momentum) * running_var + momentum * var
    else:
        invstd = (1.0 / np.sqrt(running_var + eps)).astype(x.dtype)
        xhat = (x2 - running_mean) * invstd
        y = xhat * gamma + beta
    cache = (training, xhat, gamma, invstd, x.shape)
    return np.ascontiguousarray(y.reshape(B, T, C).transpose(0, 2, 1)), cache


def batchnorm1d_backward(cache, grad):
    training, xhat, gamma, invstd, shape = cache
    B, C, T = shape
    g2 = _to_nlc(grad).reshape(B * T, C)
    if training:
        dx, dgamma, dbeta = kernels.bn_backward(g2, xhat, gamma, invstd)
    else:
        dx = g2 * (gamma * invstd)
        dgamma = (g2 * xhat).sum(axis=0)
        dbeta = g2.sum(axis=0)
    return np.ascontiguousarray(dx.reshape(B, T, C).transpose(0, 2, 1)), dgamma, dbeta


def relu(x):
    return np.maximum(x, 0)


def relu_backward(x, grad):
    return grad * (x > 0)


def dropout(x, rate, rng, training):
    """Inverted dropout; returns ``(y, mask)`` where mask already carries the 1/(1-rate) scale."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must be in [0, 1)")
    if not training or rate == 0.0:
        return x, None
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)
    return x * mask, mask


def linear(x, w, b):
    if x.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ValueError(f"shape mismatch: input {x.shape}, weight {w.shape}, bias {b.shape}")
    return x @ w + b


def linear_backward(x, w, grad):
    return grad @ w.T, x.T @ grad, grad.sum(axis=0)


def flatten(x):
    return x.reshape(x.shape[0], -1)


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def softmax_xent(logits, labels):
    """Mean cross-entropy and its gradient w.r.t. the logits.

    The loss is returned as a numpy scalar of the logits' dtype.
    """
    labels = np.asarray(labels)
    B, M = logits.shape
    if labels.shape != (B,):
        raise ValueError("labels must have one entry per row")
    if B == 0:
        raise ValueError("empty batch")
    if labels.min() < 0 or labels.max() >= M:
        raise ValueError(f"label out of range [0, {M})")
    logp = log_softmax(logits)
    rows = np.arange(B)
    loss = -logp[rows, labels].sum() / B
    grad = np.exp(logp)
    grad[rows, labels] -= 1
    grad /= B
    return loss, grad
