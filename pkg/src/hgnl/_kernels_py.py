"""NumPy implementations of the dense kernels.

This is the fallback backend; the compiled extension in ``_kernels_cy``
implements the same functions with identical semantics. Shape validation
happens one layer up in :mod:`hgnl.ops`; these functions assume C-contiguous
float64 inputs of the right rank.
"""

import numpy as np


def matmul(a, b):
    return a @ b


def _dense_weight(weights, groups):
    # Grouped 1x1 conv is evaluated through its block-diagonal dense form so
    # that grouped and dense results are the same computation (exact equality
    # holds by construction, not by accumulation-order luck).
    nb, co_g, ci_g = weights.shape
    full = np.zeros((co_g * groups, ci_g * groups))
    for i in range(groups):
        block = weights[0] if nb == 1 else weights[i]
        full[i * co_g:(i + 1) * co_g, i * ci_g:(i + 1) * ci_g] = block
    return full


def grouped_conv1x1(weights, bias, x, groups):
    if groups == 1:
        out = weights[0] @ x
    else:
        out = _dense_weight(weights, groups) @ x
    out += bias[:, None]
    return out


def grouped_conv1x1_backward(grad, weights, x, groups):
    nb, co_g, ci_g = weights.shape
    grad_w = np.zeros_like(weights)
    grad_x = np.empty_like(x)
    for i in range(groups):
        block = weights[0] if nb == 1 else weights[i]
        g_i = grad[i * co_g:(i + 1) * co_g]
        x_i = x[i * ci_g:(i + 1) * ci_g]
        grad_w[0 if nb == 1 else i] += g_i @ x_i.T
        grad_x[i * ci_g:(i + 1) * ci_g] = block.T @ g_i
    grad_b = grad.sum(axis=1)
    return grad_w, grad_b, grad_x


def gmm_qk(q, k, groups):
    m1, n = q.shape
    rows = m1 // groups
    out = np.empty((groups, n, n))
    for i in range(groups):
        sl = slice(i * rows, (i + 1) * rows)
        out[i] = q[sl].T @ k[sl]
    return out


def gmm_qk_backward(grad, q, k):
    groups = grad.shape[0]
    rows = q.shape[0] // groups
    grad_q = np.empty_like(q)
    grad_k = np.empty_like(k)
    for i in range(groups):
        sl = slice(i * rows, (i + 1) * rows)
        grad_q[sl] = k[sl] @ grad[i].T
        grad_k[sl] = q[sl] @ grad[i]
    return grad_q, grad_k


def gmm_va(v, a):
    groups = a.shape[0]
    rows = v.shape[0] // groups
    out = np.empty_like(v)
    for i in range(groups):
        sl = slice(i * rows, (i + 1) * rows)
        out[sl] = v[sl] @ a[i]
    return out


def gmm_va_backward(grad, v, a):
    groups = a.shape[0]
    rows = v.shape[0] // groups
    grad_v = np.empty_like(v)
    grad_a = np.empty_like(a)
    for i in range(groups):
        sl = slice(i * rows, (i + 1) * rows)
        grad_v[sl] = grad[sl] @ a[i].T
        grad_a[i] = v[sl].T @ grad[sl]
    return grad_v, grad_a
