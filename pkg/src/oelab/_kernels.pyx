# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: fused per-row transformer primitives and the optimizer
update. Mirrors the formulas in ``oelab._kernels_py``; one thread, no
data-dependent branching, so results are reproducible run to run."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, sqrt, tanh, INFINITY

cnp.import_array()

IS_COMPILED = True

ctypedef fused real:
    float
    double

cdef double _GELU_C = 0.7978845608028654  # sqrt(2/pi)
cdef double _GELU_A = 0.044715


def layer_norm_forward(real[:, ::1] x, real[::1] gamma, real[::1] beta, double eps):
    cdef Py_ssize_t r = x.shape[0], d = x.shape[1]
    cdef Py_ssize_t i, j
    cdef double acc, mu, var, rs
    dtype = np.float32 if real is float else np.float64
    y_arr = np.empty((r, d), dtype=dtype)
    mean_arr = np.empty(r, dtype=dtype)
    rstd_arr = np.empty(r, dtype=dtype)
    cdef real[:, ::1] y = y_arr
    cdef real[::1] mean = mean_arr
    cdef real[::1] rstd = rstd_arr
    for i in range(r):
        acc = 0.0
        for j in range(d):
            acc += x[i, j]
        mu = acc / d
        acc = 0.0
        for j in range(d):
            acc += (x[i, j] - mu) * (x[i, j] - mu)
        var = acc / d
        rs = 1.0 / sqrt(var + eps)
        mean[i] = <real> mu
        rstd[i] = <real> rs
        for j in range(d):
            y[i, j] = <real> ((x[i, j] - mu) * rs * gamma[j] + beta[j])
    return y_arr, mean_arr, rstd_arr


def layer_norm_backward(real[:, ::1] gy, real[:, ::1] x, real[::1] gamma,
                        real[::1] mean, real[::1] rstd):
    cdef Py_ssize_t r = x.shape[0], d = x.shape[1]
    cdef Py_ssize_t i, j
    cdef double xhat, gh, s1, s2
    dtype = np.float32 if real is float else np.float64
    gx_arr = np.empty((r, d), dtype=dtype)
    dgamma_arr = np.zeros(d, dtype=dtype)
    dbeta_arr = np.zeros(d, dtype=dtype)
    cdef real[:, ::1] gx = gx_arr
    cdef real[::1] dgamma = dgamma_arr
    cdef real[::1] dbeta = dbeta_arr
    for i in range(r):
        s1 = 0.0
        s2 = 0.0
        for j in range(d):
            xhat = (x[i, j] - mean[i]) * rstd[i]
            gh = gy[i, j] * gamma[j]
            dgamma[j] += <real> (gy[i, j] * xhat)
            dbeta[j] += gy[i, j]
            s1 += gh
            s2 += gh * xhat
        s1 /= d
        s2 /= d
        for j in range(d):
            xhat = (x[i, j] - mean[i]) * rstd[i]
            gh = gy[i, j] * gamma[j]
            gx[i, j] = <real> (rstd[i] * (gh - s1 - xhat * s2))
    return gx_arr, dgamma_arr, dbeta_arr


def softmax_forward(real[:, ::1] x):
    cdef Py_ssize_t r = x.shape[0], d = x.shape[1]
    cdef Py_ssize_t i, j
    cdef double m, acc
    dtype = np.float32 if real is float else np.float64
    y_arr = np.empty((r, d), dtype=dtype)
    cdef real[:, ::1] y = y_arr
    for i in range(r):
        m = x[i, 0]
        for j in range(1, d):
            if x[i, j] > m:
                m = x[i, j]
        acc = 0.0
        for j in range(d):
            y[i, j] = <real> exp(x[i, j] - m)
            acc += y[i, j]
        for j in range(d):
            y[i, j] = <real> (y[i, j] / acc)
    return y_arr


def softmax_backward(real[:, ::1] gy, real[:, ::1] y):
    cdef Py_ssize_t r = y.shape[0], d = y.shape[1]
    cdef Py_ssize_t i, j
    cdef double dot
    dtype = np.float32 if real is float else np.float64
    gx_arr = np.empty((r, d), dtype=dtype)
    cdef real[:, ::1] gx = gx_arr
    for i in range(r):
        dot = 0.0
        for j in range(d):
            dot += gy[i, j] * y[i, j]
        for j in range(d):
            gx[i, j] = <real> (y[i, j] * (gy[i, j] - dot))
    return gx_arr


def logsumexp_forward(real[:, ::1] x):
    cdef Py_ssize_t r = x.shape[0], d = x.shape[1]
    cdef Py_ssize_t i, j
    cdef double m, shift, acc
    dtype = np.float32 if real is float else np.float64
    lse_arr = np.empty(r, dtype=dtype)
    cdef real[::1] lse = lse_arr
    for i in range(r):
        m = x[i, 0]
        for j in range(1, d):
            if x[i, j] > m:
                m = x[i, j]
        shift = m if m > -INFINITY and m < INFINITY else 0.0
        acc = 0.0
        for j in range(d):
            acc += exp(x[i, j] - shift)
        lse[i] = <real> (log(acc) + shift)
    return lse_arr


def logsumexp_backward(real[::1] glse, real[:, ::1] x, real[::1] lse):
    cdef Py_ssize_t r = x.shape[0], d = x.shape[1]
    cdef Py_ssize_t i, j
    dtype = np.float32 if real is float else np.float64
    gx_arr = np.empty((r, d), dtype=dtype)
    cdef real[:, ::1] gx = gx_arr
    for i in range(r):
        for j in range(d):
            gx[i, j] = <real> (glse[i] * exp(x[i, j] - lse[i]))
    return gx_arr


def relu_forward(real[::1] x):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t i
    dtype = np.float32 if real is float else np.float64
    y_arr = np.empty(n, dtype=dtype)
    cdef real[::1] y = y_arr
    for i in range(n):
        y[i] = x[i] if x[i] > 0.0 else 0.0
    return y_arr


def relu_backward(real[::1] gy, real[::1] x):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t i
    dtype = np.float32 if real is float else np.float64
    gx_arr = np.empty(n, dtype=dtype)
    cdef real[::1] gx = gx_arr
    for i in range(n):
        gx[i] = gy[i] if x[i] > 0.0 else 0.0
    return gx_arr


def gelu_forward(real[::1] x):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t i
    cdef double u
    dtype = np.float32 if real is float else np.float64
    y_arr = np.empty(n, dtype=dtype)
    cdef real[::1] y = y_arr
    for i in range(n):
        u = _GELU_C * (x[i] + _GELU_A * x[i] * x[i] * x[i])
        y[i] = <real> (0.5 * x[i] * (1.0 + tanh(u)))
    return y_arr


def gelu_backward(real[::1] gy, real[::1] x):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t i
    cdef double u, t, du
    dtype = np.float32 if real is float else np.float64
    gx_arr = np.empty(n, dtype=dtype)
    cdef real[::1] gx = gx_arr
    for i in range(n):
        u = _GELU_C * (x[i] + _GELU_A * x[i] * x[i] * x[i])
        t = tanh(u)
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * x[i] * x[i])
        gx[i] = <real> (gy[i] * (0.5 * (1.0 + t) + 0.5 * x[i] * (1.0 - t * t) * du))
    return gx_arr


def adamw_update(real[::1] p, real[::1] g, real[::1] m, real[::1] v,
                 long step, double lr, double beta1, double beta2,
                 double eps, double weight_decay):
    cdef Py_ssize_t n = p.shape[0]
    cdef Py_ssize_t i
    cdef double bc1 = 1.0 - beta1**step
    cdef double bc2 = 1.0 - beta2**step
    for i in range(n):
        if weight_decay != 0.0:
            p[i] -= <real> (lr * weight_decay * p[i])
        m[i] = <real> (beta1 * m[i] + (1.0 - beta1) * g[i])
        v[i] = <real> (beta2 * v[i] + (1.0 - beta2) * g[i] * g[i])
        p[i] -= <real> (lr * (m[i] / bc1) / (sqrt(v[i] / bc2) + eps))
