"""Compiled twin of primed.kernels._numpy.

Fused loops over flat float64 buffers. Matrix products are deliberately
absent: both backends delegate matmul to NumPy's BLAS, which a handwritten
loop would not beat. The win here is removing per-op dispatch and temporary
allocations on the many small elementwise kernels a training step issues.
"""
import numpy as np

from libc.math cimport exp, log, log1p, sqrt, tanh, fabs

BACKEND_NAME = "compiled"


cdef inline double _sigmoid(double x) nogil:
    cdef double e
    if x >= 0.0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


def sigmoid_fw(x):
    cdef const double[::1] xv = x.ravel()
    out = np.empty_like(x)
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    for i in range(n):
        ov[i] = _sigmoid(xv[i])
    return out


def sigmoid_bw(g, out):
    cdef const double[::1] gv = g.ravel()
    cdef const double[::1] sv = out.ravel()
    res = np.empty_like(g)
    cdef double[::1] rv = res.ravel()
    cdef Py_ssize_t i, n = gv.shape[0]
    for i in range(n):
        rv[i] = gv[i] * (sv[i] * (1.0 - sv[i]))
    return res


def tanh_fw(x):
    cdef const double[::1] xv = x.ravel()
    out = np.empty_like(x)
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    for i in range(n):
        ov[i] = tanh(xv[i])
    return out


def tanh_bw(g, out):
    cdef const double[::1] gv = g.ravel()
    cdef const double[::1] tv = out.ravel()
    res = np.empty_like(g)
    cdef double[::1] rv = res.ravel()
    cdef Py_ssize_t i, n = gv.shape[0]
    for i in range(n):
        rv[i] = gv[i] * (1.0 - tv[i] * tv[i])
    return res


def relu_fw(x):
    cdef const double[::1] xv = x.ravel()
    out = np.empty_like(x)
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    for i in range(n):
        ov[i] = xv[i] if xv[i] > 0.0 else 0.0
    return out


def relu_bw(g, x):
    cdef const double[::1] gv = g.ravel()
    cdef const double[::1] xv = x.ravel()
    res = np.empty_like(g)
    cdef double[::1] rv = res.ravel()
    cdef Py_ssize_t i, n = gv.shape[0]
    for i in range(n):
        rv[i] = gv[i] if xv[i] > 0.0 else 0.0
    return res


def exp_fw(x):
    cdef const double[::1] xv = x.ravel()
    out = np.empty_like(x)
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    for i in range(n):
        ov[i] = exp(xv[i])
    return out


def exp_bw(g, out):
    cdef const double[::1] gv = g.ravel()
    cdef const double[::1] ev = out.ravel()
    res = np.empty_like(g)
    cdef double[::1] rv = res.ravel()
    cdef Py_ssize_t i, n = gv.shape[0]
    for i in range(n):
        rv[i] = gv[i] * ev[i]
    return res


def log_fw(x):
    cdef const double[::1] xv = x.ravel()
    out = np.empty_like(x)
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    for i in range(n):
        ov[i] = log(xv[i])
    return out


def log_bw(g, x):
    cdef const double[::1] gv = g.ravel()
    cdef const double[::1] xv = x.ravel()
    res = np.empty_like(g)
    cdef double[::1] rv = res.ravel()
    cdef Py_ssize_t i, n = gv.shape[0]
    for i in range(n):
        rv[i] = gv[i] / xv[i]
    return res


def clip_fw(x, double lo, double hi):
    cdef const double[::1] xv = x.ravel()
    out = np.empty_like(x)
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    for i in range(n):
        if xv[i] < lo:
            ov[i] = lo
        elif xv[i] > hi:
            ov[i] = hi
        else:
            ov[i] = xv[i]
    return out


def clip_bw(g, x, double lo, double hi):
    cdef const double[::1] gv = g.ravel()
    cdef const double[::1] xv = x.ravel()
    res = np.empty_like(g)
    cdef double[::1] rv = res.ravel()
    cdef Py_ssize_t i, n = gv.shape[0]
    for i in range(n):
        rv[i] = gv[i] if lo < xv[i] < hi else 0.0
    return res


def softmax_fw(x):
    cdef const double[:, ::1] xv = x
    out = np.empty_like(x)
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i, j, rows = xv.shape[0], cols = xv.shape[1]
    cdef double mx, total
    for i in range(rows):
        mx = xv[i, 0]
        for j in range(1, cols):
            if xv[i, j] > mx:
                mx = xv[i, j]
        total = 0.0
        for j in range(cols):
            ov[i, j] = exp(xv[i, j] - mx)
            total += ov[i, j]
        for j in range(cols):
            ov[i, j] /= total
    return out


def softmax_bw(g, p):
    cdef const double[:, ::1] gv = g
    cdef const double[:, ::1] pv = p
    res = np.empty_like(g)
    cdef double[:, ::1] rv = res
    cdef Py_ssize_t i, j, rows = gv.shape[0], cols = gv.shape[1]
    cdef double dot
    for i in range(rows):
        dot = 0.0
        for j in range(cols):
            dot += gv[i, j] * pv[i, j]
        for j in range(cols):
            rv[i, j] = pv[i, j] * (gv[i, j] - dot)
    return res


def bce_logits_fw(logits, targets):
    cdef const double[::1] lv = logits.ravel()
    cdef const double[::1] yv = targets.ravel()
    out = np.empty_like(logits)
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = lv.shape[0]
    cdef double l
    for i in range(n):
        l = lv[i]
        ov[i] = (l if l > 0.0 else 0.0) - l * yv[i] + log1p(exp(-fabs(l)))
    return out


def bce_logits_bw(g, logits, targets):
    cdef const double[::1] gv = g.ravel()
    cdef const double[::1] lv = logits.ravel()
    cdef const double[::1] yv = targets.ravel()
    res = np.empty_like(g)
    cdef double[::1] rv = res.ravel()
    cdef Py_ssize_t i, n = gv.shape[0]
    for i in range(n):
        rv[i] = gv[i] * (_sigmoid(lv[i]) - yv[i])
    return res


def sum_all(x):
    cdef const double[::1] xv = x.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    cdef double total = 0.0
    for i in range(n):
        total += xv[i]
    return total


def adam_step(param, grad, m, v, double lr, double beta1, double beta2,
              double eps, double weight_decay, double bc1, double bc2):
    cdef double[::1] pv = param
    cdef const double[::1] gv = grad
    cdef double[::1] mv = m
    cdef double[::1] vv = v
    cdef Py_ssize_t i, n = pv.shape[0]
    for i in range(n):
        mv[i] = mv[i] * beta1 + (1.0 - beta1) * gv[i]
        vv[i] = vv[i] * beta2 + (1.0 - beta2) * (gv[i] * gv[i])
        pv[i] = pv[i] - lr * ((mv[i] / bc1) / (sqrt(vv[i] / bc2) + eps) + weight_decay * pv[i])
