"""Pure-numpy implementations of the hot kernels.

Layout is channels-last throughout: sequences are ``[B, T, C]`` and
batch-norm inputs are 2-D ``[N, C]`` with statistics taken over rows.
"""
import numpy as np
from numpy.lib.stride_tricks import as_strided


def im2col(x, k):
    """Unfold ``x[B, T, C]`` into zero-padded windows ``[B, T, k*C]``.

    Window entry ``j*C + c`` of row ``(b, t)`` holds ``x[b, t + j - k//2, c]``.
    """
    B, T, C = x.shape
    pad = k // 2
    xp = np.zeros((B, T + k - 1, C), dtype=x.dtype)
    xp[:, pad:pad + T] = x
    sb, st, sc = xp.strides
    win = as_strided(xp, shape=(B, T, k * C), strides=(sb, st, sc), writeable=False)
    return np.ascontiguousarray(win)


def col2im(dcols, k, C):
    """Adjoint of :func:`im2col`."""
    B, T, _ = dcols.shape
    pad = k // 2
    dxp = np.zeros((B, T + k - 1, C), dtype=dcols.dtype)
    for j in range(k):
        dxp[:, j:j + T] += dcols[:, :, j * C:(j + 1) * C]
    return dxp[:, pad:pad + T].copy()


def _acc(dtype):
    return np.promote_types(dtype, np.float64)


def bn_train_forward(x, gamma, beta, eps):
    n = x.shape[0]
    acc = _acc(x.dtype)
    mean = x.sum(axis=0, dtype=acc) / n
    centered = x - mean.astype(x.dtype)
    var = np.einsum("ij,ij->j", centered, centered, dtype=acc) / n
    invstd = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = centered * invstd
    y = xhat * gamma + beta
    return y, xhat, mean, var, invstd


def bn_backward(dy, xhat, gamma, invstd):
    n = dy.shape[0]
    acc = _acc(dy.dtype)
    dbeta = dy.sum(axis=0, dtype=acc)
    dgamma = np.einsum("ij,ij->j", dy, xhat, dtype=acc)
    scale = (gamma * invstd / n).astype(dy.dtype)
    dx = scale * (n * dy - dbeta.astype(dy.dtype) - xhat * dgamma.astype(dy.dtype))
    return dx, dgamma.astype(dy.dtype), dbeta.astype(dy.dtype)
