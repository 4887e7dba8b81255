"""Tensor engine: op behavior, backward rules, and the finite-difference checker."""

import numpy as np
import pytest

import skelgcn.tensor as tz
from skelgcn.errors import ConfigError, ShapeError
from skelgcn.tensor import RunningStats, Tensor, backward, finite_diff_check


def t64(data, grad=True):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=grad)


class TestMatmul:
    def test_identity(self):
        out = tz.matmul(t64([[1, 0], [0, 1]]), t64([[3], [4]]))
        assert np.array_equal(out.data, [[3], [4]])

    def test_dot_product(self):
        out = tz.matmul(t64([[1, 2]]), t64([[3], [4]]))
        assert np.array_equal(out.data, [[11]])

    def test_gradient_vs_finite_differences(self):
        rng = np.random.default_rng(3)
        a = t64(rng.normal(size=(3, 4)))
        b = t64(rng.normal(size=(4, 2)))
        r = tz.constant(rng.normal(size=(3, 2)), dtype=np.float64)
        assert finite_diff_check(lambda t: tz.reduce_sum(tz.matmul(t, b) * r), a) <= 1e-6
        assert finite_diff_check(lambda t: tz.reduce_sum(tz.matmul(a, t) * r), b) <= 1e-6

    def test_batched_broadcast(self):
        rng = np.random.default_rng(4)
        a = t64(rng.normal(size=(2, 3, 4)))
        b = t64(rng.normal(size=(4, 5)))
        out = tz.matmul(a, b)
        assert out.shape == (2, 3, 5)
        backward(tz.reduce_sum(out))
        assert a.grad.shape == a.shape and b.grad.shape == b.shape

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(3, 4\).*\(3, 2\)"):
            tz.matmul(t64(np.zeros((3, 4))), t64(np.zeros((3, 2))))


class TestConv:
    def test_scaling_kernel(self):
        x = t64(np.ones((1, 1, 3, 2)))
        w = t64(np.full((1, 1, 1, 1), 2.0))
        assert np.array_equal(tz.conv(x, w).data, np.full((1, 1, 3, 2), 2.0))

    def test_sliding_window_oracle(self):
        # brute-force cross-correlation with zero padding
        def oracle(series, kernel, pad):
            padded = [0.0] * pad + list(series) + [0.0] * pad
            return [sum(kernel[i] * padded[s + i] for i in range(len(kernel)))
                    for s in range(len(padded) - len(kernel) + 1)]

        series = [1.0, 2.0, 3.0, 4.0, 5.0]
        kernel = [1.0, 0.0, -1.0]
        x = t64(np.array(series).reshape(1, 1, 5, 1))
        w = t64(np.array(kernel).reshape(1, 1, 3, 1))
        out = tz.conv(x, w, pad_t=1)
        assert np.allclose(out.data.ravel(), oracle(series, kernel, 1))
        assert np.allclose(out.data.ravel(), [-2, -2, -2, -2, 4])

    def test_identity_kernel(self):
        rng = np.random.default_rng(5)
        x = t64(rng.normal(size=(2, 3, 4, 5)))
        w = t64(np.eye(3).reshape(3, 3, 1, 1))
        assert np.allclose(tz.conv(x, w).data, x.data)

    def test_strided_output_length(self):
        x = t64(np.zeros((1, 1, 300, 2)))
        w = t64(np.zeros((1, 1, 9, 1)))
        assert tz.conv(x, w, stride_t=2, pad_t=4).shape == (1, 1, 150, 2)

    def test_nonpositive_output_error(self):
        with pytest.raises(ConfigError, match="non-positive"):
            tz.conv(t64(np.zeros((1, 1, 2, 2))), t64(np.zeros((1, 1, 5, 1))))

    def test_even_kernel_rejected(self):
        with pytest.raises(ConfigError):
            tz.conv(t64(np.zeros((1, 1, 8, 2))), t64(np.zeros((1, 1, 4, 1))))

    def test_gradients(self):
        rng = np.random.default_rng(6)
        x = t64(rng.normal(size=(2, 3, 6, 5)))
        w = t64(rng.normal(size=(4, 3, 3, 3)))
        r = tz.constant(rng.normal(size=(2, 4, 3, 5)), dtype=np.float64)

        def f_x(t):
            return tz.reduce_sum(tz.conv(t, w, stride_t=2, pad_t=1, pad_v=1) * r)

        def f_w(t):
            return tz.reduce_sum(tz.conv(x, t, stride_t=2, pad_t=1, pad_v=1) * r)

        assert finite_diff_check(f_x, x) <= 1e-5
        assert finite_diff_check(f_w, w) <= 1e-5


class TestBatchNorm:
    def test_standardized_input_unchanged(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(16, 3, 4, 2))
        x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
        xt = t64(x)
        g, b = t64(np.ones(3)), t64(np.zeros(3))
        out = tz.batch_norm(xt, g, b, RunningStats(3, np.float64), mode="train")
        assert np.abs(out.data - x).max() < 1e-4  # eps shifts values slightly

    def test_zero_gamma_gives_beta(self):
        rng = np.random.default_rng(8)
        x = t64(rng.normal(size=(4, 3, 2)))
        g, b = t64(np.zeros(3)), t64(np.array([1.0, -2.0, 0.5]))
        out = tz.batch_norm(x, g, b, RunningStats(3, np.float64), mode="train")
        assert np.allclose(out.data, np.broadcast_to(b.data.reshape(1, 3, 1), x.shape))

    def test_moment_oracle(self):
        # large-variance data keeps the eps correction below the tolerance
        rng = np.random.default_rng(9)
        x = t64(rng.normal(scale=20.0, size=(4, 3, 2, 2)))
        gamma = t64(np.array([1.0, 2.0, 0.5]))
        beta = t64(np.array([0.3, -1.0, 0.0]))
        out = tz.batch_norm(x, gamma, beta, RunningStats(3, np.float64), mode="train").data
        means = out.mean(axis=(0, 2, 3))
        variances = out.var(axis=(0, 2, 3))
        assert np.abs(means - beta.data).max() <= 1e-6
        assert np.abs(variances - gamma.data ** 2).max() <= 1e-6

    def test_batch_one_zero_variance_defined(self):
        x = t64(np.ones((1, 2, 3)))
        out = tz.batch_norm(x, t64(np.ones(2)), t64(np.zeros(2)), RunningStats(2, np.float64),
                            mode="train")
        assert np.isfinite(out.data).all()

    def test_eval_uses_running_stats(self):
        run = RunningStats(2, np.float64)
        run.mean[:] = [1.0, -1.0]
        run.var[:] = [4.0, 0.25]
        x = t64(np.array([[[1.0], [-1.0]]]))
        out = tz.batch_norm(x, t64(np.ones(2)), t64(np.zeros(2)), run, mode="eval")
        assert np.abs(out.data).max() < 1e-5

    def test_invariant_batch8(self):
        rng = np.random.default_rng(10)
        x = t64(rng.normal(scale=2.0, size=(8, 4, 5)))
        gamma = t64(rng.uniform(0.5, 2.0, size=4))
        beta = t64(rng.normal(size=4))
        out = tz.batch_norm(x, gamma, beta, RunningStats(4, np.float64), mode="train").data
        assert np.abs(out.mean(axis=(0, 2)) - beta.data).max() <= 1e-6
        assert np.abs(out.var(axis=(0, 2)) - gamma.data ** 2).max() <= 1e-5


class TestActivations:
    def test_relu_values(self):
        out = tz.activation(t64([-1.0, 0.0, 2.0]), "relu")
        assert np.array_equal(out.data, [0.0, 0.0, 2.0])

    def test_sigmoid_symmetry_point(self):
        assert tz.activation(t64([0.0]), "sigmoid").data[0] == 0.5

    def test_sigmoid_gradient(self):
        rng = np.random.default_rng(11)
        x = t64(rng.uniform(-3, 3, size=7))
        err = finite_diff_check(lambda t: tz.reduce_sum(tz.sigmoid(t)), x, h=1e-5)
        assert err <= 1e-8

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            tz.activation(t64([1.0]), "tanh")


class TestSoftmax:
    def test_uniform(self):
        out = tz.softmax(t64(np.zeros(4)), axis=0)
        assert np.allclose(out.data, 0.25)

    def test_shift_invariance(self):
        rng = np.random.default_rng(12)
        x = rng.normal(size=(3, 5))
        a = tz.softmax(t64(x), axis=1).data
        b = tz.softmax(t64(x + 123.456), axis=1).data
        assert np.allclose(a, b, atol=1e-12)

    def test_extended_precision_oracle(self):
        # reference values via the decimal module at 50 digits
        from decimal import Decimal, getcontext
        getcontext().prec = 50
        xs = [Decimal(1), Decimal(2), Decimal(3)]
        exps = [x.exp() for x in xs]
        total = sum(exps)
        expected = np.array([float(e / total) for e in exps])
        out = tz.softmax(t64([1.0, 2.0, 3.0]), axis=0)
        assert np.abs(out.data - expected).max() <= 1e-12

    def test_rows_sum_to_one_for_wild_inputs(self):
        rng = np.random.default_rng(13)
        for scale in (1.0, 100.0, 1e4):
            x = t64(rng.normal(scale=scale, size=(4, 6)))
            out = tz.softmax(x, axis=1).data
            assert (out >= 0).all()
            assert np.abs(out.sum(axis=1) - 1.0).max() <= 1e-6


class TestReduceMean:
    def test_constant(self):
        out = tz.reduce_mean(t64(np.full((3, 4), 7.5)), (0, 1))
        assert out.data == pytest.approx(7.5)

    def test_arithmetic(self):
        assert tz.reduce_mean(t64([[1.0, 3.0], [5.0, 7.0]]), (0, 1)).data == pytest.approx(4.0)

    def test_gradient_is_inverse_count(self):
        rng = np.random.default_rng(14)
        x = t64(rng.normal(size=(2, 3, 4)))
        y = tz.reduce_mean(x, (0, 2))
        backward(tz.reduce_sum(y))
        assert np.allclose(x.grad, 1.0 / 8)
        assert finite_diff_check(lambda t: tz.reduce_sum(tz.reduce_mean(t, (0, 2))), x) <= 1e-5

    def test_invalid_axes(self):
        with pytest.raises(ShapeError):
            tz.reduce_mean(t64(np.zeros((2, 2))), (0, 0))
        with pytest.raises(ShapeError):
            tz.reduce_mean(t64(np.zeros((2, 2))), (5,))

    def test_empty_extent(self):
        with pytest.raises(ShapeError):
            tz.reduce_mean(Tensor(np.zeros((2, 0)), requires_grad=True), (1,))


class TestCrossEntropy:
    def test_uniform_scores_give_log_k(self):
        for k in (2, 5, 60):
            loss = tz.cross_entropy(t64(np.zeros((3, k))), [0, 1, k - 1])
            assert loss.item() == pytest.approx(np.log(k), rel=1e-12)

    def test_margin_drives_loss_to_zero(self):
        losses = []
        for margin in (1.0, 5.0, 20.0):
            scores = np.zeros((1, 4))
            scores[0, 2] = margin
            losses.append(tz.cross_entropy(t64(scores), [2]).item())
        assert losses[0] > losses[1] > losses[2]
        assert losses[-1] < 1e-8

    def test_sum_of_terms_oracle(self):
        rng = np.random.default_rng(15)
        scores = rng.normal(size=(3, 5))
        labels = [4, 0, 2]
        expected = -np.mean([np.log(np.exp(scores[i, labels[i]]) / np.exp(scores[i]).sum())
                             for i in range(3)])
        loss = tz.cross_entropy(t64(scores), labels)
        assert abs(loss.item() - expected) <= 1e-10

    def test_out_of_range_label(self):
        with pytest.raises(IndexError):
            tz.cross_entropy(t64(np.zeros((2, 3))), [0, 3])


class TestBackward:
    def test_sum_gradient_all_ones(self):
        x = t64(np.arange(6.0).reshape(2, 3))
        backward(tz.reduce_sum(x))
        assert np.array_equal(x.grad, np.ones((2, 3)))

    def test_fanout_accumulation(self):
        x = t64([1.0, 2.0])
        backward(tz.reduce_sum(x + x))
        assert np.array_equal(x.grad, [2.0, 2.0])

    def test_shared_subexpression_equals_expanded(self):
        rng = np.random.default_rng(16)
        vals = rng.normal(size=4)
        x = t64(vals)
        y = x * x           # shared use of x
        backward(tz.reduce_sum(y + y))
        shared = x.grad.copy()

        x1, x2 = t64(vals), t64(vals)
        backward(tz.reduce_sum(x1 * x1 + x2 * x2))
        assert np.allclose(shared, x1.grad + x2.grad)

    def test_non_scalar_loss_rejected(self):
        with pytest.raises(ShapeError):
            backward(t64([1.0, 2.0]))

    def test_tiny_network_vs_finite_differences(self):
        rng = np.random.default_rng(17)
        w1 = t64(rng.normal(size=(4, 3)))
        w2 = t64(rng.normal(size=(3, 2)))
        x = tz.constant(rng.normal(size=(5, 4)), dtype=np.float64)
        labels = np.array([0, 1, 0, 1, 1])

        def loss_fn(_):
            h = tz.relu(tz.matmul(x, w1))
            return tz.cross_entropy(tz.matmul(h, w2), labels)

        assert finite_diff_check(loss_fn, w1) <= 1e-5
        assert finite_diff_check(loss_fn, w2) <= 1e-5


class TestFiniteDiffCheck:
    def test_identity(self):
        x = t64([0.5, -0.25, 2.0])
        assert finite_diff_check(lambda t: t, x) <= 1e-9

    def test_sum_of_squares(self):
        x = t64([1.0, 2.0])
        y = tz.reduce_sum(x * x)
        backward(y)
        assert np.allclose(x.grad, [2.0, 4.0])
        assert finite_diff_check(lambda t: tz.reduce_sum(t * t), x) <= 1e-8

    def test_restores_input(self):
        x = t64([1.0, 2.0, 3.0])
        before = x.data.copy()
        finite_diff_check(lambda t: tz.reduce_sum(t * t), x)
        assert np.array_equal(x.data, before)


class TestTensorBasics:
    def test_invariants(self):
        x = Tensor(np.zeros((2, 3)), requires_grad=True, dtype=np.float32)
        assert x.data.size == 6 and x.dtype == np.float32
        backward(tz.reduce_sum(x * x))
        assert x.grad.shape == x.shape and x.grad.dtype == x.dtype

    def test_mixed_dtypes_rejected(self):
        a = Tensor(np.zeros(3), dtype=np.float32)
        b = Tensor(np.zeros(3), dtype=np.float64)
        with pytest.raises(TypeError):
            tz.add(a, b)

    def test_float64_bitwise_determinism(self):
        rng = np.random.default_rng(18)
        x = rng.normal(size=(4, 4))

        def run():
            t = t64(x)
            out = tz.softmax(tz.matmul(t, t), axis=1)
            backward(tz.reduce_sum(out * out))
            return out.data.copy(), t.grad.copy()

        o1, g1 = run()
        o2, g2 = run()
        assert np.array_equal(o1, o2) and np.array_equal(g1, g2)

    def test_detach_blocks_gradient(self):
        x = t64([1.0, 2.0])
        backward(tz.reduce_sum(x.detach() * x))
        assert np.allclose(x.grad, [1.0, 2.0])  # only the tracked factor
