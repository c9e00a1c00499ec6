"""Compiled kernels: per-block loops with sequential accumulation.

Every output scalar is accumulated in ascending order of the contraction
index, so grouped and block-diagonal dense evaluations agree bit for bit
(interleaved zero products cannot perturb an IEEE-754 running sum).
"""

import numpy as np


def matmul(double[:, ::1] a, double[:, ::1] b):
    cdef Py_ssize_t p = a.shape[0], q = a.shape[1], r = b.shape[1]
    out_arr = np.zeros((p, r))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, t, j
    cdef double av
    for i in range(p):
        for t in range(q):
            av = a[i, t]
            for j in range(r):
                out[i, j] += av * b[t, j]
    return out_arr


def grouped_conv1x1(double[:, :, ::1] weights, double[::1] bias,
                    double[:, ::1] x, Py_ssize_t groups):
    cdef Py_ssize_t nb = weights.shape[0]
    cdef Py_ssize_t co_g = weights.shape[1], ci_g = weights.shape[2]
    cdef Py_ssize_t n = x.shape[1]
    out_arr = np.zeros((co_g * groups, n))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t g, wb, o, t, j, row
    cdef double wv
    for g in range(groups):
        wb = 0 if nb == 1 else g
        for o in range(co_g):
            row = g * co_g + o
            for t in range(ci_g):
                wv = weights[wb, o, t]
                for j in range(n):
                    out[row, j] += wv * x[g * ci_g + t, j]
            for j in range(n):
                out[row, j] += bias[row]
    return out_arr


def grouped_conv1x1_backward(double[:, ::1] grad, double[:, :, ::1] weights,
                             double[:, ::1] x, Py_ssize_t groups):
    cdef Py_ssize_t nb = weights.shape[0]
    cdef Py_ssize_t co_g = weights.shape[1], ci_g = weights.shape[2]
    cdef Py_ssize_t n = x.shape[1]
    gw_arr = np.zeros((nb, co_g, ci_g))
    gb_arr = np.zeros(co_g * groups)
    gx_arr = np.zeros((ci_g * groups, n))
    cdef double[:, :, ::1] gw = gw_arr
    cdef double[::1] gb = gb_arr
    cdef double[:, ::1] gx = gx_arr
    cdef Py_ssize_t g, wb, o, t, j, row
    cdef double gv
    for g in range(groups):
        wb = 0 if nb == 1 else g
        for o in range(co_g):
            row = g * co_g + o
            for j in range(n):
                gb[row] += grad[row, j]
            for t in range(ci_g):
                gv = 0.0
                for j in range(n):
                    gv += grad[row, j] * x[g * ci_g + t, j]
                gw[wb, o, t] += gv
                gv = weights[wb, o, t]
                for j in range(n):
                    gx[g * ci_g + t, j] += gv * grad[row, j]
    return gw_arr, gb_arr, gx_arr


def gmm_qk(double[:, ::1] q, double[:, ::1] k, Py_ssize_t groups):
    cdef Py_ssize_t m1 = q.shape[0], n = q.shape[1]
    cdef Py_ssize_t rows = m1 // groups
    out_arr = np.zeros((groups, n, n))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t g, t, i, j, base
    cdef double qv
    for g in range(groups):
        base = g * rows
        for t in range(rows):
            for i in range(n):
                qv = q[base + t, i]
                for j in range(n):
                    out[g, i, j] += qv * k[base + t, j]
    return out_arr


def gmm_qk_backward(double[:, :, ::1] grad, double[:, ::1] q, double[:, ::1] k):
    cdef Py_ssize_t groups = grad.shape[0], n = grad.shape[1]
    cdef Py_ssize_t rows = q.shape[0] // groups
    gq_arr = np.zeros((q.shape[0], n))
    gk_arr = np.zeros((k.shape[0], n))
    cdef double[:, ::1] gq = gq_arr
    cdef double[:, ::1] gk = gk_arr
    cdef Py_ssize_t g, t, i, j, base
    cdef double acc
    for g in range(groups):
        base = g * rows
        for t in range(rows):
            for i in range(n):
                acc = 0.0
                for j in range(n):
                    acc += grad[g, i, j] * k[base + t, j]
                gq[base + t, i] = acc
            for j in range(n):
                acc = 0.0
                for i in range(n):
                    acc += q[base + t, i] * grad[g, i, j]
                gk[base + t, j] = acc
    return gq_arr, gk_arr


def gmm_va(double[:, ::1] v, double[:, :, ::1] a):
    cdef Py_ssize_t groups = a.shape[0], n = a.shape[1]
    cdef Py_ssize_t m = v.shape[0]
    cdef Py_ssize_t rows = m // groups
    out_arr = np.zeros((m, n))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t g, o, t, j, row
    cdef double vv
    for g in range(groups):
        for o in range(rows):
            row = g * rows + o
            for t in range(n):
                vv = v[row, t]
                for j in range(n):
                    out[row, j] += vv * a[g, t, j]
    return out_arr


def gmm_va_backward(double[:, ::1] grad, double[:, ::1] v, double[:, :, ::1] a):
    cdef Py_ssize_t groups = a.shape[0], n = a.shape[1]
    cdef Py_ssize_t m = v.shape[0]
    cdef Py_ssize_t rows = m // groups
    gv_arr = np.zeros((m, n))
    ga_arr = np.zeros((groups, n, n))
    cdef double[:, ::1] gv = gv_arr
    cdef double[:, :, ::1] ga = ga_arr
    cdef Py_ssize_t g, o, t, j, row
    cdef double acc
    for g in range(groups):
        for o in range(rows):
            row = g * rows + o
            for t in range(n):
                acc = 0.0
                for j in range(n):
                    acc += grad[row, j] * a[g, t, j]
                gv[row, t] = acc
                for j in range(n):
                    ga[g, t, j] += v[row, t] * grad[row, j]
    return gv_arr, ga_arr
