# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels; same contracts as ``refed.nn._fallback``."""
import numpy as np
cimport numpy as cnp
from cython cimport floating
from libc.math cimport sqrt

cnp.import_array()


def im2col(const floating[:, :, ::1] x, int k):
    cdef Py_ssize_t B = x.shape[0], T = x.shape[1], C = x.shape[2]
    cdef Py_ssize_t pad = k // 2
    cdef Py_ssize_t b, t, j, c, src
    dtype = np.float32 if floating is float else np.float64
    out = np.zeros((B, T, k * C), dtype=dtype)
    cdef floating[:, :, ::1] o = out
    with nogil:
        for b in range(B):
            for t in range(T):
                for j in range(k):
                    src = t + j - pad
                    if src < 0 or src >= T:
                        continue
                    for c in range(C):
                        o[b, t, j * C + c] = x[b, src, c]
    return out


def col2im(const floating[:, :, ::1] dcols, int k, int C):
    cdef Py_ssize_t B = dcols.shape[0], T = dcols.shape[1]
    cdef Py_ssize_t pad = k // 2
    cdef Py_ssize_t b, t, j, c, dst
    dtype = np.float32 if floating is float else np.float64
    out = np.zeros((B, T, C), dtype=dtype)
    cdef floating[:, :, ::1] o = out
    with nogil:
        for b in range(B):
            for j in range(k):
                for t in range(T):
                    dst = t + j - pad
                    if dst < 0 or dst >= T:
                        continue
                    for c in range(C):
                        o[b, dst, c] += dcols[b, t, j * C + c]
    return out


def bn_train_forward(const floating[:, ::1] x, const floating[::1] gamma, const floating[::1] beta, double eps):
    cdef Py_ssize_t n = x.shape[0], C = x.shape[1]
    cdef Py_ssize_t i, c
    dtype = np.float32 if floating is float else np.float64
    mean = np.zeros(C, dtype=np.float64)
    var = np.zeros(C, dtype=np.float64)
    invstd = np.empty(C, dtype=dtype)
    y = np.empty((n, C), dtype=dtype)
    xhat = np.empty((n, C), dtype=dtype)
    cdef double[::1] m = mean, v = var
    cdef floating[::1] inv = invstd
    cdef floating[:, ::1] yv = y, xh = xhat
    cdef floating d
    with nogil:
        for i in range(n):
            for c in range(C):
                m[c] += x[i, c]
        for c in range(C):
            m[c] /= n
        for i in range(n):
            for c in range(C):
                d = x[i, c] - <floating>m[c]
                xh[i, c] = d
                v[c] += <double>d * d
        for c in range(C):
            v[c] /= n
            inv[c] = <floating>(1.0 / sqrt(v[c] + eps))
        for i in range(n):
            for c in range(C):
                xh[i, c] = xh[i, c] * inv[c]
                yv[i, c] = xh[i, c] * gamma[c] + beta[c]
    return y, xhat, mean, var, invstd


def bn_backward(const floating[:, ::1] dy, const floating[:, ::1] xhat, const floating[::1] gamma,
                const floating[::1] invstd):
    cdef Py_ssize_t n = dy.shape[0], C = dy.shape[1]
    cdef Py_ssize_t i, c
    dtype = np.float32 if floating is float else np.float64
    sb = np.zeros(C, dtype=np.float64)
    sg = np.zeros(C, dtype=np.float64)
    dx = np.empty((n, C), dtype=dtype)
    cdef double[::1] db = sb, dg = sg
    cdef floating[:, ::1] dxv = dx
    scale_arr = np.empty(C, dtype=dtype)
    cdef floating[::1] scale = scale_arr
    cdef floating dbf, dgf
    with nogil:
        for i in range(n):
            for c in range(C):
                db[c] += dy[i, c]
                dg[c] += <double>dy[i, c] * xhat[i, c]
        for c in range(C):
            scale[c] = <floating>(gamma[c] * invstd[c] / n)
        for i in range(n):
            for c in range(C):
                dbf = <floating>db[c]
                dgf = <floating>dg[c]
                dxv[i, c] = scale[c] * (n * dy[i, c] - dbf - xhat[i, c] * dgf)
    return dx, sg.astype(dtype), sb.astype(dtype)
