"""Dense tensor operations with analytic adjoints and MAdds instrumentation.

Tensors are plain float64 ndarrays (rank 1-3, C order). Each forward op has
a hand-written backward companion; there is no tape. When an
:class:`OpCounter` is passed, the op tallies the scalar multiplies and
additions of its reference algorithm: matrix products count ``k`` multiplies
and ``k - 1`` additions per output entry, 1x1 convolutions additionally
count one bias addition per output entry.
"""

from dataclasses import dataclass

import numpy as np

from . import backend
from .errors import DimensionError, ConfigError


@dataclass
class OpCounter:
    """Tally of scalar multiplies/additions executed by instrumented kernels."""

    multiplies: int = 0
    additions: int = 0

    @property
    def madds(self) -> int:
        return self.multiplies + self.additions

    def tally(self, multiplies: int, additions: int) -> None:
        self.multiplies += multiplies
        self.additions += additions


def as_tensor(x, name="tensor"):
    """Coerce to a C-contiguous float64 array of rank 1-3."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim < 1 or arr.ndim > 3:
        raise DimensionError(f"{name} must have rank 1-3, got rank {arr.ndim}")
    if arr.size == 0:
        raise DimensionError(f"{name} must not be empty")
    return arr


def _matrix(x, name):
    arr = as_tensor(x, name)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be a matrix, got shape {arr.shape}")
    return arr


# ---------------------------------------------------------------------------
# forward ops


def matmul(a, b, counter=None):
    """Matrix product of ``a`` (p x q) and ``b`` (q x r)."""
    a = _matrix(a, "a")
    b = _matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul inner dimensions differ: {a.shape} vs {b.shape}"
        )
    if counter is not None:
        p, q = a.shape
        r = b.shape[1]
        counter.tally(p * r * q, p * r * (q - 1))
    return backend.kernels().matmul(a, b)


def grouped_conv1x1(weights, bias, x, groups, shared=False, counter=None):
    """Grouped 1x1 convolution over the channel (row) axis of ``x``.

    ``weights`` holds one (c_out/g, c_in/g) block per group, or a single
    block reused by every group when ``shared`` is set. ``bias`` has length
    c_out and is added to every column.
    """
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    bias = as_tensor(bias, "bias")
    x = _matrix(x, "x")
    if weights.ndim != 3:
        raise DimensionError(
            f"weights must be (blocks, c_out/g, c_in/g), got shape {weights.shape}"
        )
    if groups < 1:
        raise ConfigError(f"groups must be >= 1, got {groups}")
    expected_blocks = 1 if shared else groups
    if weights.shape[0] != expected_blocks:
        raise ConfigError(
            f"expected {expected_blocks} weight block(s) for groups={groups}, "
            f"shared={shared}; got {weights.shape[0]}"
        )
    c_in = x.shape[0]
    if c_in % groups != 0:
        raise ConfigError(f"c_in={c_in} not divisible by groups={groups}")
    if weights.shape[2] != c_in // groups:
        raise DimensionError(
            f"weight block width {weights.shape[2]} does not match "
            f"c_in/groups = {c_in // groups}"
        )
    c_out = weights.shape[1] * groups
    if bias.ndim != 1 or bias.shape[0] != c_out:
        raise DimensionError(
            f"bias length {bias.shape} does not match c_out={c_out}"
        )
    if counter is not None:
        n = x.shape[1]
        k = c_in // groups
        # per output entry: k multiplies, k-1 sum additions, 1 bias addition
        counter.tally(c_out * k * n, c_out * k * n)
    return backend.kernels().grouped_conv1x1(weights, bias, x, groups)


def gmm_qk(q, k, groups, counter=None):
    """Per-group products Q_i^T K_i, one (n, n) attention slice per group."""
    q = _matrix(q, "q")
    k = _matrix(k, "k")
    if q.shape != k.shape:
        raise DimensionError(f"q and k shapes differ: {q.shape} vs {k.shape}")
    if groups < 1 or q.shape[0] % groups != 0:
        raise ConfigError(
            f"row count {q.shape[0]} not divisible by groups={groups}"
        )
    if counter is not None:
        m1, n = q.shape
        counter.tally(n * n * m1, n * n * (m1 - groups))
    return backend.kernels().gmm_qk(q, k, groups)


def gmm_va(v, a, counter=None):
    """Per-group products V_i A_i; the group count is the slice count of ``a``."""
    v = _matrix(v, "v")
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != 3 or a.shape[1] != a.shape[2]:
        raise DimensionError(
            f"attention must be (groups, n, n), got shape {a.shape}"
        )
    groups = a.shape[0]
    m, n = v.shape
    if m % groups != 0:
        raise DimensionError(
            f"v row count {m} not divisible by {groups} attention slices"
        )
    if a.shape[1] != n:
        raise DimensionError(
            f"attention size {a.shape[1]} does not match frame count {n}"
        )
    if counter is not None:
        counter.tally(m * n * n, m * n * (n - 1))
    return backend.kernels().gmm_va(v, a)


def softmax_cols(a):
    """Column-wise softmax, stabilized by per-column max subtraction."""
    a = _matrix(a, "a")
    shifted = a - a.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)


def relu(t):
    t = as_tensor(t, "t")
    return np.maximum(t, 0.0)


def residual_scale(f_o, f, s):
    """Scaled residual combination ``s * f_o + f``."""
    f_o = as_tensor(f_o, "f_o")
    f = as_tensor(f, "f")
    if f_o.shape != f.shape:
        raise DimensionError(f"shapes differ: {f_o.shape} vs {f.shape}")
    return s * f_o + f


def mean_over_frames(f):
    """Row-wise mean across the frame (column) axis."""
    f = _matrix(f, "f")
    if f.shape[1] < 1:
        raise DimensionError("cannot average over an empty frame axis")
    return f.mean(axis=1)


# ---------------------------------------------------------------------------
# adjoints


def matmul_backward(grad, a, b):
    grad = np.ascontiguousarray(grad, dtype=np.float64)
    kern = backend.kernels()
    return kern.matmul(grad, np.ascontiguousarray(b.T)), kern.matmul(
        np.ascontiguousarray(a.T), grad
    )


def grouped_conv1x1_backward(grad, weights, x, groups, shared=False):
    """Gradients w.r.t. (weights, bias, x); shared blocks accumulate over groups."""
    grad = np.ascontiguousarray(grad, dtype=np.float64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    x = np.ascontiguousarray(x, dtype=np.float64)
    if grad.shape != (weights.shape[1] * groups, x.shape[1]):
        raise DimensionError(
            f"upstream gradient shape {grad.shape} does not match output "
            f"({weights.shape[1] * groups}, {x.shape[1]})"
        )
    return backend.kernels().grouped_conv1x1_backward(grad, weights, x, groups)


def gmm_qk_backward(grad, q, k):
    grad = np.ascontiguousarray(grad, dtype=np.float64)
    if grad.shape[1:] != (q.shape[1], q.shape[1]):
        raise DimensionError(
            f"upstream gradient shape {grad.shape} does not match attention "
            f"({q.shape[1]}, {q.shape[1]}) slices"
        )
    return backend.kernels().gmm_qk_backward(grad, q, k)


def gmm_va_backward(grad, v, a):
    grad = np.ascontiguousarray(grad, dtype=np.float64)
    if grad.shape != v.shape:
        raise DimensionError(
            f"upstream gradient shape {grad.shape} does not match {v.shape}"
        )
    return backend.kernels().gmm_va_backward(grad, v, a)


def softmax_cols_backward(grad, out):
    # d softmax: out * (g - <out, g>_column)
    inner = (out * grad).sum(axis=0, keepdims=True)
    return out * (grad - inner)


def relu_backward(grad, t):
    return grad * (t > 0.0)


def residual_scale_backward(grad, f_o, s):
    grad_f_o = s * grad
    grad_f = grad
    grad_s = float((grad * f_o).sum())
    return grad_f_o, grad_f, grad_s


def mean_over_frames_backward(grad, n):
    grad = np.asarray(grad, dtype=np.float64)
    return np.repeat(grad[:, None] / n, n, axis=1)
