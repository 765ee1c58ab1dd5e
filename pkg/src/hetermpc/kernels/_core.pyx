# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernels for the hot numeric paths.

Mirrors hetermpc.kernels.reference; one fused loop per kernel instead of a
chain of numpy temporaries. Accumulations run in double for both dtypes.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, sqrt, tanh

cnp.import_array()

ctypedef fused floating:
    float
    double

BACKEND_NAME = "cython"

cdef double GELU_C = 0.7978845608028654  # sqrt(2/pi)
cdef double GELU_A = 0.044715


cdef inline object _dtype_of(floating x):
    if floating is float:
        return np.float32
    return np.float64


def layer_norm_fwd(floating[:, ::1] x, floating[::1] gain, floating[::1] bias, double eps):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    cdef object dt = np.float32 if floating is float else np.float64
    y_arr = np.empty((n, d), dtype=dt)
    mean_arr = np.empty(n, dtype=dt)
    rstd_arr = np.empty(n, dtype=dt)
    cdef floating[:, ::1] y = y_arr
    cdef floating[::1] mean = mean_arr
    cdef floating[::1] rstd = rstd_arr
    cdef Py_ssize_t i, j
    cdef double acc, mu, var, rs, xh
    with nogil:
        for i in range(n):
            acc = 0.0
            for j in range(d):
                acc += x[i, j]
            mu = acc / d
            acc = 0.0
            for j in range(d):
                acc += (x[i, j] - mu) * (x[i, j] - mu)
            var = acc / d
            rs = 1.0 / sqrt(var + eps)
            mean[i] = <floating> mu
            rstd[i] = <floating> rs
            for j in range(d):
                xh = (x[i, j] - mu) * rs
                y[i, j] = <floating> (xh * gain[j] + bias[j])
    return y_arr, mean_arr, rstd_arr


def layer_norm_bwd(floating[:, ::1] dy, floating[:, ::1] x, floating[::1] gain,
                   floating[::1] mean, floating[::1] rstd):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    cdef object dt = np.float32 if floating is float else np.float64
    dx_arr = np.empty((n, d), dtype=dt)
    dgain_arr = np.zeros(d, dtype=dt)
    dbias_arr = np.zeros(d, dtype=dt)
    cdef floating[:, ::1] dx = dx_arr
    cdef floating[::1] dgain = dgain_arr
    cdef floating[::1] dbias = dbias_arr
    cdef Py_ssize_t i, j
    cdef double m1, m2, xh, dxh, mu, rs
    with nogil:
        for i in range(n):
            mu = mean[i]
            rs = rstd[i]
            m1 = 0.0
            m2 = 0.0
            for j in range(d):
                xh = (x[i, j] - mu) * rs
                dxh = dy[i, j] * gain[j]
                m1 += dxh
                m2 += dxh * xh
                dgain[j] += <floating> (dy[i, j] * xh)
                dbias[j] += dy[i, j]
            m1 /= d
            m2 /= d
            for j in range(d):
                xh = (x[i, j] - mu) * rs
                dxh = dy[i, j] * gain[j]
                dx[i, j] = <floating> ((dxh - m1 - xh * m2) * rs)
    return dx_arr, dgain_arr, dbias_arr


def softmax_fwd(floating[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1]
    cdef object dt = np.float32 if floating is float else np.float64
    y_arr = np.empty((n, m), dtype=dt)
    cdef floating[:, ::1] y = y_arr
    cdef Py_ssize_t i, j
    cdef double mx, acc, e
    with nogil:
        for i in range(n):
            mx = x[i, 0]
            for j in range(1, m):
                if x[i, j] > mx:
                    mx = x[i, j]
            acc = 0.0
            for j in range(m):
                e = exp(x[i, j] - mx)
                y[i, j] = <floating> e
                acc += e
            for j in range(m):
                y[i, j] = <floating> (y[i, j] / acc)
    return y_arr


def softmax_bwd(floating[:, ::1] dy, floating[:, ::1] y):
    cdef Py_ssize_t n = y.shape[0], m = y.shape[1]
    cdef object dt = np.float32 if floating is float else np.float64
    dx_arr = np.empty((n, m), dtype=dt)
    cdef floating[:, ::1] dx = dx_arr
    cdef Py_ssize_t i, j
    cdef double s
    with nogil:
        for i in range(n):
            s = 0.0
            for j in range(m):
                s += dy[i, j] * y[i, j]
            for j in range(m):
                dx[i, j] = <floating> (y[i, j] * (dy[i, j] - s))
    return dx_arr


def gelu_fwd(floating[::1] x):
    cdef Py_ssize_t n = x.shape[0]
    cdef object dt = np.float32 if floating is float else np.float64
    y_arr = np.empty(n, dtype=dt)
    cdef floating[::1] y = y_arr
    cdef Py_ssize_t i
    cdef double v, u
    with nogil:
        for i in range(n):
            v = x[i]
            u = GELU_C * (v + GELU_A * v * v * v)
            y[i] = <floating> (0.5 * v * (1.0 + tanh(u)))
    return y_arr


def gelu_bwd(floating[::1] dy, floating[::1] x):
    cdef Py_ssize_t n = x.shape[0]
    cdef object dt = np.float32 if floating is float else np.float64
    dx_arr = np.empty(n, dtype=dt)
    cdef floating[::1] dx = dx_arr
    cdef Py_ssize_t i
    cdef double v, u, t, du
    with nogil:
        for i in range(n):
            v = x[i]
            u = GELU_C * (v + GELU_A * v * v * v)
            t = tanh(u)
            du = GELU_C * (1.0 + 3.0 * GELU_A * v * v)
            dx[i] = <floating> (dy[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du))
    return dx_arr


def adamw_update(floating[::1] p, floating[::1] g, floating[::1] m, floating[::1] v,
                 double lr, double beta1, double beta2, double eps,
                 double weight_decay, long step):
    cdef Py_ssize_t n = p.shape[0]
    cdef Py_ssize_t i
    cdef double c1 = 1.0 - beta1 ** step
    cdef double c2 = 1.0 - beta2 ** step
    cdef double decay = 1.0 - lr * weight_decay
    cdef double mi, vi
    with nogil:
        for i in range(n):
            p[i] = <floating> (p[i] * decay)
            mi = beta1 * m[i] + (1.0 - beta1) * g[i]
            vi = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i]
            m[i] = <floating> mi
            v[i] = <floating> vi
            p[i] = <floating> (p[i] - lr * (mi / c1) / (sqrt(vi / c2) + eps))
