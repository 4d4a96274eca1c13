import numpy as np
import pytest

from ettfs import tensor as tc
from ettfs.errors import ConfigError, ShapeError, UsageError
from ettfs.tensor import Tensor

from oracles import central_difference, naive_conv2d, naive_pool, rel_err


def _fd_check(build, arrays, tol=1e-6):
    """Compare tape gradients of scalar ``build(*tensors)`` against central FD."""
    params = [Tensor(a, requires_grad=True) for a in arrays]
    loss = build(*params)
    tc.backward(loss)
    with tc.no_grad():
        fd = central_difference(lambda: float(build(*[Tensor(a) for a in arrays]).data), arrays)
    for p, g in zip(params, fd):
        assert rel_err(p.grad, g) < tol


class TestMatmul:
    def test_identity(self):
        out = tc.matmul(Tensor([[1.0, 0], [0, 1]]), Tensor([[2.0, 3], [4, 5]]))
        np.testing.assert_array_equal(out.data, [[2, 3], [4, 5]])

    def test_sum_via_ones(self):
        out = Tensor([[1.0, 1.0]]) @ Tensor([[0.5], [0.5]])
        np.testing.assert_array_equal(out.data, [[1.0]])

    def test_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            tc.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_gradient_matches_fd(self, f64, rng):
        A, B = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
        _fd_check(lambda a, b: (a @ b).sum(), [A, B])


class TestConv2d:
    def test_full_overlap_sum(self):
        out = tc.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor(np.ones((1, 1, 3, 3))))
        np.testing.assert_array_equal(out.data, [[[[9.0]]]])

    def test_mnist_shape(self):
        out = tc.conv2d(Tensor(np.zeros((1, 1, 28, 28))), Tensor(np.zeros((16, 1, 5, 5))))
        assert out.shape == (1, 16, 24, 24)

    @pytest.mark.parametrize("stride,padding", [(1, 0), (2, 0), (1, 1), (2, 1)])
    def test_matches_naive_loops(self, f64, rng, stride, padding):
        x, w = rng.normal(size=(2, 3, 7, 6)), rng.normal(size=(4, 3, 3, 2))
        out = tc.conv2d(Tensor(x), Tensor(w), stride, padding)
        np.testing.assert_allclose(out.data, naive_conv2d(x, w, stride, padding), atol=1e-12)

    @pytest.mark.parametrize("stride", [1, 2])
    def test_gradient_matches_fd(self, f64, rng, stride):
        x, w = rng.normal(size=(2, 2, 5, 5)), rng.normal(size=(3, 2, 3, 3))
        mix = rng.normal(size=(2, 3, 3 if stride == 1 else 2, 3 if stride == 1 else 2))
        _fd_check(lambda a, b: (tc.conv2d(a, b, stride) * mix).sum(), [x, w])

    def test_empty_output_is_config_error(self):
        with pytest.raises(ConfigError):
            tc.conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 3, 3))))

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            tc.conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))


class TestPooling:
    def test_avg_matches_naive(self, rng):
        x = rng.normal(size=(2, 3, 4, 6))
        np.testing.assert_allclose(tc.avg_pool2d(Tensor(x), 2).data, naive_pool(x, 2, np.mean))

    def test_max_matches_naive(self, rng):
        x = rng.normal(size=(2, 3, 4, 6))
        np.testing.assert_allclose(tc.max_pool2d(Tensor(x), 2).data, naive_pool(x, 2, np.max))

    def test_gradients_match_fd(self, f64, rng):
        x = rng.normal(size=(1, 2, 4, 4))
        mix = rng.normal(size=(1, 2, 2, 2))
        _fd_check(lambda a: (tc.avg_pool2d(a, 2) * mix).sum(), [x])
        _fd_check(lambda a: (tc.max_pool2d(a, 2) * mix).sum(), [x])

    def test_divisibility(self):
        with pytest.raises(ShapeError):
            tc.avg_pool2d(Tensor(np.zeros((1, 1, 5, 4))), 2)


class TestElementwise:
    def test_broadcast_gradients(self, f64, rng):
        a, b = rng.normal(size=(3, 4)), rng.normal(size=(4,))
        _fd_check(lambda x, y: (x * y + x / (y * y + 2.0) - y).sum(), [a, b])

    def test_power_exp_log_sqrt(self, f64, rng):
        a = rng.uniform(0.5, 2.0, size=(5,))
        _fd_check(lambda x: (x ** 1.5 + tc.exp(x) + tc.log(x) + tc.sqrt(x)).sum(), [a])

    def test_log_softmax(self, f64, rng):
        a = rng.normal(size=(3, 5))
        mix = rng.normal(size=(3, 5))
        _fd_check(lambda x: (tc.log_softmax(x, axis=1) * mix).sum(), [a])

    def test_stack_select_reshape_mean(self, f64, rng):
        a, b = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))

        def f(x, y):
            s = tc.stack([x, y * 2.0], axis=0)
            return (s[1] * s[0]).reshape(6).mean() + s.sum(axis=(0, 2)).sum()

        _fd_check(f, [a, b])


class TestTape:
    def test_sum_gives_ones(self):
        W = Tensor(np.arange(4.0).reshape(2, 2), requires_grad=True)
        tc.backward(W.sum())
        np.testing.assert_array_equal(W.grad, np.ones((2, 2)))

    def test_product_sum_matches_fd(self, f64, rng):
        A, B = rng.normal(size=(2, 3)), rng.normal(size=(3, 2))
        _fd_check(lambda a, b: (a @ b).sum(), [A, B])

    def test_accumulates_without_reset(self):
        W = Tensor(np.ones((2, 2)), requires_grad=True)
        loss = (W * 3.0).sum()
        tc.backward(loss, retain=True)
        first = W.grad.copy()
        tc.backward(loss)
        np.testing.assert_array_equal(W.grad, 2 * first)

    def test_non_scalar_loss_is_usage_error(self):
        W = Tensor(np.ones((2, 2)), requires_grad=True)
        with pytest.raises(UsageError):
            tc.backward(W * 2.0)

    def test_no_grad_records_nothing(self):
        W = Tensor(np.ones(3), requires_grad=True)
        with tc.no_grad():
            (W * 2.0).sum()
        assert len(tc.get_tape()) == 0

    def test_shared_input_gradients_add(self):
        x = Tensor(np.array([3.0]), requires_grad=True)
        tc.backward((x * x).sum())
        np.testing.assert_allclose(x.grad, [6.0])

    def test_precision_context_restores(self):
        before = tc.get_default_dtype()
        with tc.precision(np.float64):
            assert Tensor([1.0]).dtype == np.float64
        assert tc.get_default_dtype() is before

    def test_unsupported_dtype(self):
        with pytest.raises(ConfigError):
            tc.set_default_dtype(np.int32)
