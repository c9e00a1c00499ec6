"""Kernel-level tests: hand values, naive counting oracles, adjoint checks."""

import numpy as np
import numpy.testing as npt
import pytest

from hgnl import ops
from hgnl.errors import ConfigError, DimensionError
from hgnl.ops import OpCounter


# ---------------------------------------------------------------------------
# naive reference implementations that tally every scalar multiply and add


def naive_matmul(a, b):
    p, q = a.shape
    r = b.shape[1]
    out = np.zeros((p, r))
    mults = adds = 0
    for i in range(p):
        for j in range(r):
            acc = a[i, 0] * b[0, j]
            mults += 1
            for t in range(1, q):
                acc += a[i, t] * b[t, j]
                mults += 1
                adds += 1
            out[i, j] = acc
    return out, mults, adds


def naive_grouped_conv(weights, bias, x, groups):
    nb, co_g, ci_g = weights.shape
    n = x.shape[1]
    out = np.zeros((co_g * groups, n))
    mults = adds = 0
    for g in range(groups):
        w = weights[0] if nb == 1 else weights[g]
        for o in range(co_g):
            row = g * co_g + o
            for j in range(n):
                acc = w[o, 0] * x[g * ci_g, j]
                mults += 1
                for t in range(1, ci_g):
                    acc += w[o, t] * x[g * ci_g + t, j]
                    mults += 1
                    adds += 1
                out[row, j] = acc + bias[row]
                adds += 1
    return out, mults, adds


def naive_gmm_qk(q, k, groups):
    m1, n = q.shape
    rows = m1 // groups
    out = np.zeros((groups, n, n))
    mults = adds = 0
    for g in range(groups):
        base = g * rows
        for i in range(n):
            for j in range(n):
                acc = q[base, i] * k[base, j]
                mults += 1
                for t in range(1, rows):
                    acc += q[base + t, i] * k[base + t, j]
                    mults += 1
                    adds += 1
                out[g, i, j] = acc
    return out, mults, adds


def naive_gmm_va(v, a):
    groups, n, _ = a.shape
    m = v.shape[0]
    rows = m // groups
    out = np.zeros((m, n))
    mults = adds = 0
    for g in range(groups):
        for o in range(rows):
            row = g * rows + o
            for j in range(n):
                acc = v[row, 0] * a[g, 0, j]
                mults += 1
                for t in range(1, n):
                    acc += v[row, t] * a[g, t, j]
                    mults += 1
                    adds += 1
                out[row, j] = acc
    return out, mults, adds


def fd_check(fn, args, wrt, upstream, analytic, eps=1e-6, tol=1e-6):
    """Central differences of sum(fn(*args) * upstream) w.r.t. args[wrt]."""
    x = args[wrt]
    numeric = np.zeros_like(x)
    flat = x.reshape(-1)
    nflat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float((fn(*args) * upstream).sum())
        flat[i] = orig - eps
        lo = float((fn(*args) * upstream).sum())
        flat[i] = orig
        nflat[i] = (hi - lo) / (2 * eps)
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    assert np.max(np.abs(analytic - numeric) / denom) < tol


class TestMatmul:
    def test_identity(self, kernel_backend):
        npt.assert_array_equal(ops.matmul(np.eye(2), np.eye(2)), np.eye(2))

    def test_hand_values(self, kernel_backend):
        out = ops.matmul(np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[1.0], [1.0]]))
        npt.assert_array_equal(out, [[3.0], [7.0]])

    def test_counter_2x2x2(self, kernel_backend):
        c = OpCounter()
        ops.matmul(np.eye(2), np.eye(2), counter=c)
        assert (c.multiplies, c.additions) == (8, 4)

    @pytest.mark.parametrize("p,q,r", [(1, 1, 1), (2, 3, 4), (5, 2, 3), (4, 7, 1)])
    def test_counter_matches_naive_tally(self, kernel_backend, p, q, r):
        rng = np.random.default_rng(0)
        a = rng.uniform(-1, 1, (p, q))
        b = rng.uniform(-1, 1, (q, r))
        c = OpCounter()
        out = ops.matmul(a, b, counter=c)
        ref, mults, adds = naive_matmul(a, b)
        assert (c.multiplies, c.additions) == (mults, adds)
        npt.assert_allclose(out, ref, atol=1e-13)

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 2\)"):
            ops.matmul(np.ones((2, 3)), np.ones((2, 2)))

    def test_deterministic(self, kernel_backend):
        rng = np.random.default_rng(1)
        a, b = rng.uniform(-1, 1, (6, 5)), rng.uniform(-1, 1, (5, 4))
        npt.assert_array_equal(ops.matmul(a, b), ops.matmul(a, b))


class TestGroupedConv:
    def test_selection_weights(self, kernel_backend):
        weights = np.array([[[1.0, 0.0]], [[0.0, 1.0]]])  # two 1x2 blocks
        bias = np.zeros(2)
        f = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0], [7.0, 8.0]])
        out = ops.grouped_conv1x1(weights, bias, f, 2)
        npt.assert_array_equal(out, [[1.0, 2.0], [7.0, 8.0]])

    def test_single_group_is_dense_matmul_plus_bias(self, kernel_backend):
        rng = np.random.default_rng(2)
        w = rng.uniform(-1, 1, (1, 3, 4))
        bias = rng.uniform(-1, 1, 3)
        f = rng.uniform(-1, 1, (4, 5))
        out = ops.grouped_conv1x1(w, bias, f, 1)
        npt.assert_allclose(out, w[0] @ f + bias[:, None], atol=1e-14)

    def test_shared_equals_duplicated_blocks(self, kernel_backend):
        rng = np.random.default_rng(3)
        block = rng.uniform(-1, 1, (1, 2, 3))
        bias = rng.uniform(-1, 1, 4)
        f = rng.uniform(-1, 1, (6, 5))
        shared = ops.grouped_conv1x1(block, bias, f, 2, shared=True)
        duplicated = ops.grouped_conv1x1(
            np.concatenate([block, block]), bias, f, 2
        )
        npt.assert_array_equal(shared, duplicated)

    @pytest.mark.parametrize("c_in,c_out,g,n", [
        (4, 4, 2, 3), (30, 10, 5, 4), (12, 6, 3, 7), (8, 8, 1, 2), (14, 21, 7, 3),
    ])
    def test_grouped_equals_block_diagonal_dense_bitwise(self, kernel_backend,
                                                         c_in, c_out, g, n):
        rng = np.random.default_rng(4)
        weights = rng.uniform(-1, 1, (g, c_out // g, c_in // g))
        bias = rng.uniform(-1, 1, c_out)
        f = rng.uniform(-1, 1, (c_in, n))
        dense = np.zeros((c_out, c_in))
        for i in range(g):
            dense[i * (c_out // g):(i + 1) * (c_out // g),
                  i * (c_in // g):(i + 1) * (c_in // g)] = weights[i]
        grouped = ops.grouped_conv1x1(weights, bias, f, g)
        via_dense = ops.grouped_conv1x1(dense[np.newaxis], bias, f, 1)
        npt.assert_array_equal(grouped, via_dense)

    @pytest.mark.parametrize("c_in,c_out,g,n", [(4, 2, 2, 2), (6, 6, 3, 4), (8, 4, 1, 3)])
    def test_counter_matches_naive_tally(self, kernel_backend, c_in, c_out, g, n):
        rng = np.random.default_rng(5)
        weights = rng.uniform(-1, 1, (g, c_out // g, c_in // g))
        bias = rng.uniform(-1, 1, c_out)
        f = rng.uniform(-1, 1, (c_in, n))
        c = OpCounter()
        out = ops.grouped_conv1x1(weights, bias, f, g, counter=c)
        ref, mults, adds = naive_grouped_conv(weights, bias, f, g)
        assert (c.multiplies, c.additions) == (mults, adds)
        npt.assert_allclose(out, ref, atol=1e-13)

    def test_divisibility_error(self):
        with pytest.raises(ConfigError):
            ops.grouped_conv1x1(np.ones((3, 1, 1)), np.zeros(3), np.ones((5, 2)), 3)

    def test_bias_length_error(self):
        with pytest.raises(DimensionError, match="bias"):
            ops.grouped_conv1x1(np.ones((2, 1, 2)), np.zeros(3), np.ones((4, 2)), 2)

    def test_block_count_error(self):
        with pytest.raises(ConfigError, match="block"):
            ops.grouped_conv1x1(np.ones((2, 1, 2)), np.zeros(2), np.ones((4, 2)), 2,
                                shared=True)


class TestGmmQk:
    def test_identity_single_group(self, kernel_backend):
        out = ops.gmm_qk(np.eye(2), np.eye(2), 1)
        npt.assert_array_equal(out, np.eye(2)[np.newaxis])

    def test_scalar_per_group(self, kernel_backend):
        out = ops.gmm_qk(np.array([[2.0], [3.0]]), np.array([[5.0], [7.0]]), 2)
        npt.assert_array_equal(out, [[[10.0]], [[21.0]]])

    def test_counter_m1_4_n3_g2(self, kernel_backend):
        rng = np.random.default_rng(6)
        q, k = rng.uniform(-1, 1, (4, 3)), rng.uniform(-1, 1, (4, 3))
        c = OpCounter()
        out = ops.gmm_qk(q, k, 2, counter=c)
        ref, mults, adds = naive_gmm_qk(q, k, 2)
        assert (c.multiplies, c.additions) == (36, 18)
        assert (mults, adds) == (36, 18)
        assert c.madds == 54
        npt.assert_allclose(out, ref, atol=1e-13)

    def test_single_group_equals_matmul(self, kernel_backend):
        rng = np.random.default_rng(7)
        q, k = rng.uniform(-1, 1, (6, 4)), rng.uniform(-1, 1, (6, 4))
        npt.assert_array_equal(
            ops.gmm_qk(q, k, 1)[0],
            ops.matmul(np.ascontiguousarray(q.T), k),
        )

    def test_divisibility_error(self):
        with pytest.raises(ConfigError):
            ops.gmm_qk(np.ones((5, 2)), np.ones((5, 2)), 2)


class TestGmmVa:
    def test_identity_attention(self, kernel_backend):
        rng = np.random.default_rng(8)
        v = rng.uniform(-1, 1, (6, 4))
        a = np.broadcast_to(np.eye(4), (2, 4, 4)).copy()
        npt.assert_array_equal(ops.gmm_va(v, a), v)

    def test_single_group_equals_matmul(self, kernel_backend):
        rng = np.random.default_rng(9)
        v = rng.uniform(-1, 1, (5, 3))
        a = rng.uniform(-1, 1, (1, 3, 3))
        npt.assert_array_equal(ops.gmm_va(v, a), ops.matmul(v, a[0]))

    def test_hand_block_values_bitwise(self, kernel_backend):
        v = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0], [7.0, 8.0]])
        a = np.array([[[1.0, 2.0], [0.5, 1.5]], [[2.0, 0.0], [1.0, 3.0]]])
        ref, mults, adds = naive_gmm_va(v, a)
        c = OpCounter()
        out = ops.gmm_va(v, a, counter=c)
        npt.assert_array_equal(out, ref)
        assert (c.multiplies, c.additions) == (mults, adds)
        assert (c.multiplies, c.additions) == (4 * 2 * 2, 4 * 2 * 1)

    def test_slice_mismatch_error(self):
        with pytest.raises(DimensionError):
            ops.gmm_va(np.ones((5, 2)), np.ones((2, 2, 2)))
        with pytest.raises(DimensionError):
            ops.gmm_va(np.ones((4, 3)), np.ones((2, 2, 2)))


class TestSoftmaxCols:
    def test_uniform_on_zeros(self):
        npt.assert_allclose(ops.softmax_cols(np.zeros((3, 3))), np.full((3, 3), 1 / 3))

    def test_closed_form_column(self):
        out = ops.softmax_cols(np.array([[0.0], [np.log(3.0)]]))
        npt.assert_allclose(out, [[0.25], [0.75]], atol=1e-15)

    def test_shift_invariance(self):
        rng = np.random.default_rng(10)
        a = rng.uniform(-2, 2, (4, 4))
        shifted = a.copy()
        shifted[:, 1] += 7.5
        npt.assert_allclose(ops.softmax_cols(a), ops.softmax_cols(shifted), atol=1e-15)

    def test_columns_normalized_entries_open_interval(self):
        rng = np.random.default_rng(11)
        a = rng.uniform(-3, 3, (6, 6))
        out = ops.softmax_cols(a)
        npt.assert_allclose(out.sum(axis=0), 1.0, atol=1e-12)
        assert np.all(out > 0) and np.all(out < 1)


class TestElementwise:
    def test_relu_values(self):
        npt.assert_array_equal(ops.relu(np.array([-1.0, 0.0, 2.0])), [0.0, 0.0, 2.0])

    def test_relu_fixed_point_and_idempotent(self):
        rng = np.random.default_rng(12)
        x = rng.uniform(0, 2, (3, 4))
        npt.assert_array_equal(ops.relu(x), x)
        y = rng.uniform(-2, 2, (3, 4))
        npt.assert_array_equal(ops.relu(ops.relu(y)), ops.relu(y))

    def test_residual_scale(self):
        rng = np.random.default_rng(13)
        f = rng.uniform(-1, 1, (3, 2))
        f_o = rng.uniform(-1, 1, (3, 2))
        npt.assert_array_equal(ops.residual_scale(f_o, f, 0.0), f)
        npt.assert_array_equal(ops.residual_scale(np.zeros_like(f), f, 1.0), f)
        npt.assert_allclose(ops.residual_scale(f, f, 2.0), 3 * f, atol=1e-15)
        with pytest.raises(DimensionError):
            ops.residual_scale(np.ones((2, 2)), np.ones((2, 3)), 1.0)

    def test_mean_over_frames(self):
        npt.assert_array_equal(ops.mean_over_frames(np.array([[5.0], [2.0]])), [5.0, 2.0])
        npt.assert_array_equal(
            ops.mean_over_frames(np.array([[1.0, 3.0], [2.0, 4.0]])), [2.0, 3.0]
        )
        const = np.tile(np.array([[3.0], [1.0]]), (1, 7))
        npt.assert_array_equal(ops.mean_over_frames(const), [3.0, 1.0])

    def test_mean_over_frames_empty(self):
        with pytest.raises(DimensionError):
            ops.mean_over_frames(np.zeros((3, 0)))


class TestAdjoints:
    """Every hand-written backward matches central finite differences."""

    def test_matmul(self, kernel_backend):
        rng = np.random.default_rng(20)
        a, b = rng.uniform(-1, 1, (4, 3)), rng.uniform(-1, 1, (3, 5))
        u = rng.uniform(-1, 1, (4, 5))
        ga, gb = ops.matmul_backward(u, a, b)
        fd_check(ops.matmul, [a, b], 0, u, ga)
        fd_check(ops.matmul, [a, b], 1, u, gb)

    @pytest.mark.parametrize("shared", [False, True])
    def test_grouped_conv(self, kernel_backend, shared):
        rng = np.random.default_rng(21)
        g = 2
        w = rng.uniform(-1, 1, (1 if shared else g, 3, 4))
        bias = rng.uniform(-1, 1, 6)
        f = rng.uniform(-1, 1, (8, 5))
        u = rng.uniform(-1, 1, (6, 5))
        gw, gb, gf = ops.grouped_conv1x1_backward(u, w, f, g, shared=shared)

        def fwd(w_, b_, f_):
            return ops.grouped_conv1x1(w_, b_, f_, g, shared=shared)

        fd_check(fwd, [w, bias, f], 0, u, gw)
        fd_check(fwd, [w, bias, f], 1, u, gb)
        fd_check(fwd, [w, bias, f], 2, u, gf)

    def test_gmm_qk(self, kernel_backend):
        rng = np.random.default_rng(22)
        q, k = rng.uniform(-1, 1, (6, 4)), rng.uniform(-1, 1, (6, 4))
        u = rng.uniform(-1, 1, (2, 4, 4))
        gq, gk = ops.gmm_qk_backward(u, q, k)
        fd_check(lambda q_, k_: ops.gmm_qk(q_, k_, 2), [q, k], 0, u, gq)
        fd_check(lambda q_, k_: ops.gmm_qk(q_, k_, 2), [q, k], 1, u, gk)

    def test_gmm_va(self, kernel_backend):
        rng = np.random.default_rng(23)
        v = rng.uniform(-1, 1, (6, 4))
        a = rng.uniform(-1, 1, (2, 4, 4))
        u = rng.uniform(-1, 1, (6, 4))
        gv, ga = ops.gmm_va_backward(u, v, a)
        fd_check(ops.gmm_va, [v, a], 0, u, gv)
        fd_check(ops.gmm_va, [v, a], 1, u, ga)

    def test_softmax_cols(self):
        rng = np.random.default_rng(24)
        z = rng.uniform(-1, 1, (5, 5))
        u = rng.uniform(-1, 1, (5, 5))
        out = ops.softmax_cols(z)
        gz = ops.softmax_cols_backward(u, out)
        fd_check(ops.softmax_cols, [z], 0, u, gz)

    def test_relu(self):
        rng = np.random.default_rng(25)
        # keep inputs away from the kink at zero
        z = rng.uniform(0.1, 1, (4, 4)) * rng.choice([-1.0, 1.0], (4, 4))
        u = rng.uniform(-1, 1, (4, 4))
        fd_check(ops.relu, [z], 0, u, ops.relu_backward(u, z))

    def test_mean_over_frames(self):
        u = np.array([3.0, -1.0])
        g = ops.mean_over_frames_backward(u, 4)
        npt.assert_allclose(g, np.array([[0.75] * 4, [-0.25] * 4]), atol=1e-15)

    def test_residual_scale(self):
        rng = np.random.default_rng(26)
        f_o = rng.uniform(-1, 1, (3, 4))
        u = rng.uniform(-1, 1, (3, 4))
        g_fo, g_f, g_s = ops.residual_scale_backward(u, f_o, 1.7)
        npt.assert_array_equal(g_fo, 1.7 * u)
        npt.assert_array_equal(g_f, u)
        assert g_s == pytest.approx(float((u * f_o).sum()))
