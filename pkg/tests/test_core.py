import threading
import unittest

import numpy as np

from tmdc.core import (
    Tape,
    Tensor,
    concat_lastdim,
    elementwise,
    getitem,
    log,
    log_softmax_lastdim,
    matmul,
    mean_over_time,
    pad_time,
    reshape,
    softmax_lastdim,
    swapaxes,
    tmean,
    tsum,
)
from tmdc.errors import (
    ConfigError,
    DomainError,
    GraphError,
    NonDeterministicError,
    NonFiniteError,
    ShapeError,
    TMDCError,
)
from tmdc.utils import NoiseSource, finite_diff_check, finite_diff_check_leaves, make_rng


class TestTensor(unittest.TestCase):

    def setUp(self):
        self.rng = np.random.default_rng(0)

    def test_data_is_read_only(self):
        t = Tensor([1.0, 2.0])
        with self.assertRaises(ValueError):
            t.data[0] = 5.0

    def test_zero_length_dimension_rejected(self):
        with self.assertRaises(ShapeError):
            Tensor(np.zeros((0, 3)))

    def test_non_finite_leaf_rejected(self):
        with self.assertRaises(NonFiniteError):
            Tensor([1.0, np.nan])

    def test_errors_are_value_errors(self):
        # 调用方按 ValueError 捕获依然有效
        self.assertTrue(issubclass(ShapeError, TMDCError))
        self.assertTrue(issubclass(TMDCError, ValueError))

    def test_matmul_shape_mismatch_names_both_shapes(self):
        with self.assertRaises(ShapeError) as ctx:
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))
        self.assertIn("[2, 3]", str(ctx.exception))
        self.assertIn("[4, 5]", str(ctx.exception))

    def test_log_of_non_positive_is_domain_error(self):
        with self.assertRaises(DomainError):
            log(Tensor([1.0, 0.0]))

    def test_assign_requires_same_shape(self):
        t = Tensor(np.zeros(3), requires_grad=True)
        t.assign_([1.0, 2.0, 3.0])
        np.testing.assert_array_equal(t.data, [1.0, 2.0, 3.0])
        with self.assertRaises(ShapeError):
            t.assign_([1.0])

    def test_softmax_rows_sum_to_one(self):
        x = Tensor(self.rng.standard_normal((4, 5)) * 30)
        s = softmax_lastdim(x).data
        np.testing.assert_allclose(s.sum(axis=-1), np.ones(4), atol=1e-12)
        np.testing.assert_allclose(np.exp(log_softmax_lastdim(x).data), s, atol=1e-12)

    def test_pad_time_and_concat(self):
        x = Tensor(np.ones((2, 3, 4)))
        self.assertEqual(pad_time(x, 1, 2).shape, (2, 6, 4))
        self.assertEqual(concat_lastdim([x, x]).shape, (2, 3, 8))


class TestTape(unittest.TestCase):

    def test_product_gradient(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        with Tape() as tape:
            loss = tsum(x * x)
        tape.backward(loss)
        np.testing.assert_allclose(x.grad, [2.0, 4.0, 6.0])

    def test_shared_input_accumulates(self):
        # x 在图中出现两次，梯度累加
        x = Tensor([3.0], requires_grad=True)
        with Tape() as tape:
            loss = tsum(x * x + x)
        tape.backward(loss)
        np.testing.assert_allclose(x.grad, [7.0])

    def test_unused_leaf_gets_zero_grad(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        y = Tensor([5.0, 6.0], requires_grad=True)
        with Tape() as tape:
            loss = tsum(x * 2.0) + tsum(y * 0.0)
        tape.backward(loss)
        np.testing.assert_allclose(y.grad, [0.0, 0.0])

    def test_non_scalar_loss(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            out = x * 2.0
        with self.assertRaises(GraphError):
            tape.backward(out)

    def test_detached_loss(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        loss = tsum(x * 2.0)  # 没有激活的 Tape
        with self.assertRaises(GraphError):
            Tape().backward(loss)

    def test_no_graph_without_tape(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        out = tsum(x * x)
        self.assertFalse(out.requires_grad)

    def test_tape_is_thread_local(self):
        seen = {}

        def worker():
            x = Tensor([1.0], requires_grad=True)
            seen["requires_grad"] = tsum(x * x).requires_grad

        with Tape() as tape:
            t = threading.Thread(target=worker)
            t.start()
            t.join()
        self.assertFalse(seen["requires_grad"])
        self.assertEqual(len(tape), 0)

    def test_reshape_swapaxes_getitem_gradients(self):
        rng = np.random.default_rng(1)

        def f(x):
            y = swapaxes(reshape(x, (2, 3, 2)), 0, 1)
            return tmean(getitem(y, (slice(0, 2),)) * y[0:2])

        err = finite_diff_check(f, Tensor(rng.standard_normal((3, 4))))
        self.assertLess(err, 1e-6)


class TestFiniteDifference(unittest.TestCase):

    def test_quadratic(self):
        err = finite_diff_check(lambda t: tsum(t * t), Tensor([1.0, 2.0, 3.0]))
        self.assertLess(err, 1e-7)

    def test_non_deterministic_function_detected(self):
        rng = np.random.default_rng(0)
        x = Tensor([1.0, 2.0], requires_grad=True)
        with self.assertRaises(NonDeterministicError):
            finite_diff_check_leaves(lambda: tsum(x * Tensor(rng.standard_normal(2))), [x])

    def test_frozen_noise_replays_draws(self):
        source = NoiseSource.from_seed(3, 1)
        a = source.eps((2, 3)).data
        b = source.mask((2, 3), 0.5)
        replay = source.frozen()
        np.testing.assert_array_equal(replay.eps((2, 3)).data, a)
        np.testing.assert_array_equal(replay.mask((2, 3), 0.5), b)

    def test_eval_noise_is_zero(self):
        source = NoiseSource.evaluation()
        np.testing.assert_array_equal(source.eps((2, 2)).data, np.zeros((2, 2)))
        self.assertIsNone(source.mask((2, 2), 0.5))

    def test_make_rng_is_deterministic(self):
        np.testing.assert_array_equal(make_rng(1, 2, 3).random(4), make_rng(1, 2, 3).random(4))
        self.assertFalse(np.array_equal(make_rng(1, 2, 3).random(4), make_rng(1, 2, 4).random(4)))

    def test_negative_seed_rejected(self):
        with self.assertRaises(ConfigError):
            make_rng(-1)
        with self.assertRaises(ConfigError):
            NoiseSource.from_seed(3, -2)


class TestSoftmaxAndConcat(unittest.TestCase):

    def test_softmax_closed_form(self):
        s = softmax_lastdim(Tensor([0.0, np.log(3.0)])).data
        np.testing.assert_allclose(s, [0.25, 0.75], atol=1e-12)

    def test_softmax_shift_invariance(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((3, 4, 6))
        shift = rng.uniform(-50, 50, size=(3, 4, 1))
        np.testing.assert_allclose(softmax_lastdim(Tensor(x + shift)).data, softmax_lastdim(Tensor(x)).data,
                                   atol=1e-12)

    def test_concat_then_split_is_identity(self):
        rng = np.random.default_rng(5)
        parts = [rng.standard_normal((2, 3, d)) for d in (1, 4, 2)]
        joined = concat_lastdim([Tensor(p) for p in parts])
        offsets = [0, 1, 5, 7]
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            np.testing.assert_array_equal(joined[..., lo:hi].data, p)

    def test_concat_backward_partitions_gradient(self):
        rng = np.random.default_rng(6)
        parts = [Tensor(rng.standard_normal((3, d)), requires_grad=True) for d in (2, 5, 3)]
        weight = rng.standard_normal((3, 10))
        with Tape() as tape:
            loss = tsum(concat_lastdim(parts) * Tensor(weight))
        tape.backward(loss)
        np.testing.assert_array_equal(parts[0].grad, weight[:, 0:2])
        np.testing.assert_array_equal(parts[1].grad, weight[:, 2:7])
        np.testing.assert_array_equal(parts[2].grad, weight[:, 7:10])


class TestRandomShapeGradients(unittest.TestCase):
    """随机形状（最大 [4, 8, 16]）上逐个运算的有限差分检查"""

    def setUp(self):
        self.rng = np.random.default_rng(12)

    def _shape(self):
        return tuple(int(self.rng.integers(1, hi + 1)) for hi in (4, 8, 16))

    def _weighted(self, out_shape):
        # 用固定的随机权重把输出压成标量，避免对称性掩盖梯度错误
        w = Tensor(self.rng.standard_normal(out_shape))
        return lambda y: tsum(y * w)

    def _check(self, fn, x):
        out = fn(Tensor(x))
        reduce = self._weighted(out.shape)
        err = finite_diff_check(lambda t: reduce(fn(t)), Tensor(x))
        self.assertLess(err, 1e-4)

    def test_elementwise(self):
        for _ in range(3):
            shape = self._shape()
            x = self.rng.standard_normal(shape)
            other = Tensor(self.rng.standard_normal(shape))
            away_from_zero = np.sign(x) * (np.abs(x) + 0.1)
            self._check(lambda t: elementwise("add", t, other), x)
            self._check(lambda t: elementwise("sub", t, other), x)
            self._check(lambda t: elementwise("mul", t, other), x)
            self._check(lambda t: elementwise("scale", t, -1.7), x)
            self._check(lambda t: elementwise("relu", t), away_from_zero)
            self._check(lambda t: elementwise("softplus", t), x)
            self._check(lambda t: elementwise("exp", t), x)
            self._check(lambda t: elementwise("log", t), np.abs(x) + 0.5)

    def test_matmul(self):
        for _ in range(3):
            b, m, k = self._shape()
            n = int(self.rng.integers(1, 9))
            right = Tensor(self.rng.standard_normal((b, k, n)))
            left = Tensor(self.rng.standard_normal((b, m, k)))
            self._check(lambda t: matmul(t, right), left.data)
            self._check(lambda t: matmul(left, t), right.data)

    def test_softmax_concat_and_pooling(self):
        for _ in range(3):
            shape = self._shape()
            x = self.rng.standard_normal(shape)
            extra = Tensor(self.rng.standard_normal(shape[:-1] + (3,)))
            self._check(softmax_lastdim, x)
            self._check(log_softmax_lastdim, x)
            self._check(lambda t: concat_lastdim([extra, t]), x)
            self._check(mean_over_time, x)
            self._check(lambda t: pad_time(t, 1, 2), x)


if __name__ == '__main__':
    unittest.main()
