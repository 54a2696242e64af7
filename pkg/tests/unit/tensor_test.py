import math
import unittest

import numpy as np
from hypothesis import given, settings, strategies as st

from deep_elastic.errors import ContractError, LabelError, NumericError, ShapeError
from deep_elastic.estimator import BlockConfig, EstimatorConfig, TaskHead, build_estimator, forward
from deep_elastic.tensor import (GRAD_CHECK_TOLERANCE, Tensor, backward, column_log_softmax, column_softmax,
                                 cross_entropy, elementwise, finite_diff_grad, gradients, matmul, mean, relative_error, relu, total)


class TestMatmul (unittest.TestCase):

    def test_identity(self):
        out = matmul(np.eye(2), np.array([[1.0, 2.0], [3.0, 4.0]]))

        np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])

    def test_projection(self):
        out = matmul(np.array([[1.0, 0.0], [0.0, 0.0]]), np.array([[5.0], [7.0]]))

        np.testing.assert_array_equal(out.data, [[5], [0]])

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeError) as ctx:
            matmul(np.zeros((2, 3)), np.zeros((2, 3)))
        self.assertIn('(2, 3)', str(ctx.exception))

    def test_gradient(self):
        rng = np.random.default_rng(0)
        a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        b = rng.standard_normal((4, 2))
        backward(total(matmul(a, b)))

        np.testing.assert_allclose(a.grad, np.ones((3, 2)) @ b.T, rtol=1e-12)
        fd = finite_diff_grad(lambda p: float(np.sum(p['a'] @ b)), {'a': a.data}, step=1e-6)
        self.assertLess(relative_error(a.grad, fd['a']), 1e-6)


class TestElementwise (unittest.TestCase):

    def test_relu(self):
        np.testing.assert_array_equal(elementwise('relu', np.array([-1.0, 0.0, 2.0])).data, [0, 0, 2])

    def test_relu_backward_only_positive(self):
        x = Tensor(np.array([-1.0, 0.0, 2.0]), requires_grad=True)
        backward(total(relu(x)))

        np.testing.assert_array_equal(x.grad, [0, 0, 1])

    def test_add_zeros(self):
        x = np.array([[1.5, -2.0], [0.25, 3.0]])

        np.testing.assert_array_equal(elementwise('add', x, np.zeros_like(x)).data, x)

    def test_add_shape_mismatch(self):
        with self.assertRaises(ShapeError):
            elementwise('add', np.zeros(3), np.zeros(4))

    def test_scale(self):
        np.testing.assert_array_equal(elementwise('scale', np.array([1.0, -2.0]), 3).data, [3, -6])

    def test_unknown_op(self):
        with self.assertRaises(ContractError):
            elementwise('tanh', np.zeros(3))

    def test_mul_gradient(self):
        rng = np.random.default_rng(1)
        values = {'a': rng.standard_normal((2, 3)), 'b': rng.standard_normal((2, 3))}
        tracked = dict((k, Tensor(v, requires_grad=True)) for k, v in values.items())
        backward(total(elementwise('mul', tracked['a'], tracked['b'])))
        fd = finite_diff_grad(lambda p: float(np.sum(p['a'] * p['b'])), values)

        for name in values:
            self.assertLess(relative_error(tracked[name].grad, fd[name]), 1e-6)


class TestColumnSoftmax (unittest.TestCase):

    def test_zeros(self):
        np.testing.assert_allclose(column_softmax(np.zeros((2, 3))).data, np.full((2, 3), 0.5))

    def test_closed_form(self):
        out = column_softmax(np.array([[math.log(3)], [0.0]]))

        np.testing.assert_allclose(out.data[:, 0], [0.75, 0.25], rtol=1e-12)

    def test_saturation(self):
        logits = np.zeros((3, 2))
        logits[1, 0] = 50.0

        self.assertGreaterEqual(column_softmax(logits).data[1, 0], 1 - 1e-6)

    def test_non_finite(self):
        with self.assertRaises(NumericError):
            column_softmax(np.array([[np.nan, 0.0], [0.0, 0.0]]))

    def test_log_softmax_matches(self):
        logits = np.random.default_rng(2).standard_normal((4, 3)) * 5

        np.testing.assert_allclose(np.exp(column_log_softmax(logits).data), column_softmax(logits).data, rtol=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2 ** 32 - 1), h=st.integers(1, 6), n=st.integers(1, 6))
    def test_columns_sum_to_one(self, seed, h, n):
        logits = np.random.default_rng(seed).standard_normal((h, n)) * 10
        probs = column_softmax(logits).data

        np.testing.assert_allclose(probs.sum(axis=0), np.ones(n), atol=1e-9)
        self.assertTrue(np.all(probs > 0))

    def test_gradient(self):
        rng = np.random.default_rng(3)
        logits = rng.standard_normal((3, 4))
        weights = rng.standard_normal((3, 4))
        leaf = Tensor(logits, requires_grad=True)
        backward(total(elementwise('mul', column_softmax(leaf), weights)))

        def f(p):
            e = np.exp(p['l'] - p['l'].max(axis=0))
            return float(np.sum(e / e.sum(axis=0) * weights))

        fd = finite_diff_grad(f, {'l': logits})['l']
        self.assertLess(relative_error(leaf.grad, fd), GRAD_CHECK_TOLERANCE['float64'])


class TestCrossEntropy (unittest.TestCase):

    def test_uniform(self):
        self.assertAlmostEqual(cross_entropy(np.zeros(4), 2).item(), math.log(4), places=12)

    def test_confident(self):
        logits = np.zeros(5)
        logits[3] = 50.0

        self.assertLess(cross_entropy(logits, 3).item(), 1e-6)

    def test_label_out_of_range(self):
        with self.assertRaises(LabelError):
            cross_entropy(np.zeros(3), 3)
        with self.assertRaises(IndexError):
            cross_entropy(np.zeros(3), -1)

    def test_gradient_is_softmax_minus_onehot(self):
        logits = np.array([0.3, -1.2, 2.0, 0.5])
        leaf = Tensor(logits, requires_grad=True)
        backward(cross_entropy(leaf, 1))
        expected = np.exp(logits) / np.sum(np.exp(logits))
        expected[1] -= 1

        np.testing.assert_allclose(leaf.grad, expected, rtol=1e-12)
        fd = finite_diff_grad(lambda p: float(-p['l'][1] + np.log(np.sum(np.exp(p['l'])))), {'l': logits})
        self.assertLess(relative_error(leaf.grad, fd['l']), 1e-6)

    def test_batch_mean(self):
        logits = np.array([[0.0, 0.0], [2.0, 0.0]])
        expected = (math.log(2) + math.log(1 + math.exp(-2))) / 2

        self.assertAlmostEqual(cross_entropy(logits, [1, 0]).item(), expected, places=12)


class TestBackward (unittest.TestCase):

    def test_linear(self):
        x = np.array([[1.0], [2.0], [-1.0]])
        w = Tensor(np.random.default_rng(4).standard_normal((2, 3)), requires_grad=True)
        backward(total(matmul(w, x)))

        np.testing.assert_allclose(w.grad, np.ones((2, 1)) @ x.T)

    def test_non_scalar_root(self):
        w = Tensor(np.ones((2, 2)), requires_grad=True)
        with self.assertRaises(ContractError):
            backward(matmul(w, w))

    def test_unreachable_is_zero(self):
        used = Tensor(np.ones(3), requires_grad=True)
        unused = Tensor(np.ones(3), requires_grad=True)
        backward(total(relu(used)))

        np.testing.assert_array_equal(unused.grad, np.zeros(3))

    def test_accumulates(self):
        w = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        backward(total(elementwise('scale', w, 3)))
        backward(total(elementwise('scale', w, 3)))

        np.testing.assert_array_equal(w.grad, [6, 6])
        w.zero_grad()
        np.testing.assert_array_equal(w.grad, [0, 0])

    def test_shared_node(self):
        # d/dw of mean(w * w) reuses w on both sides
        w = Tensor(np.array([1.0, -3.0]), requires_grad=True)
        backward(mean(elementwise('mul', w, w)))

        np.testing.assert_allclose(w.grad, [1.0, -3.0])

    def test_two_layer(self):
        rng = np.random.default_rng(5)
        values = {'w1': rng.standard_normal((5, 3)), 'w2': rng.standard_normal((2, 5))}
        x = rng.standard_normal((3, 4))
        tracked = dict((k, Tensor(v, requires_grad=True)) for k, v in values.items())
        backward(total(matmul(tracked['w2'], relu(matmul(tracked['w1'], x)))))
        fd = finite_diff_grad(lambda p: float(np.sum(p['w2'] @ np.maximum(p['w1'] @ x, 0))), values)

        for name in values:
            self.assertLess(relative_error(tracked[name].grad, fd[name]), 1e-6)


class TestFiniteDiff (unittest.TestCase):

    def test_square(self):
        grad = finite_diff_grad(lambda p: float(p['p'] ** 2), {'p': np.array(3.0)}, step=1e-5)

        self.assertAlmostEqual(float(grad['p']), 6.0, delta=1e-8)

    def test_constant(self):
        grad = finite_diff_grad(lambda p: 4.0, {'a': np.ones((2, 2))})

        np.testing.assert_array_equal(grad['a'], np.zeros((2, 2)))

    def test_bad_step(self):
        with self.assertRaises(ContractError):
            finite_diff_grad(lambda p: 0.0, {'a': np.ones(1)}, step=0)

    def test_non_finite(self):
        with self.assertRaises(NumericError):
            finite_diff_grad(lambda p: float(np.log(p['a'][0])), {'a': np.zeros(1)})

    def test_agrees_with_backward_on_estimator(self):
        blocks = [BlockConfig(3, 4, [2, 2], residual=False), BlockConfig(3, 4, [2, 2], residual=False)]
        config = EstimatorConfig(blocks, [TaskHead(0, 3, 3)])
        params = build_estimator(config, 11)
        rng = np.random.default_rng(6)
        # Nonzero biases keep every ReLU input off the kink
        biases = [name for name in params if name.split('.')[-1].startswith('b')]
        params = params.replace(dict(
            (name, rng.choice([-1.0, 1.0], size=params[name].shape) * rng.uniform(0.2, 0.6, size=params[name].shape))
            for name in biases))
        x = rng.standard_normal((5, 3))
        y = rng.integers(0, 3, size=5)
        z = (1, 0)
        pre0 = x @ params['block0.W1'].T + params['block0.b1']
        h0 = np.maximum(pre0, 0) @ params['block0.W2'].T + params['block0.b2']
        pre1 = h0 @ params['block1.W1'][:2].T + params['block1.b1'][:2]
        self.assertGreater(min(np.abs(pre0).min(), np.abs(pre1).min()), 1e-4)

        tracked = params.tracked()
        backward(cross_entropy(forward(tracked, config, x, z, 0), y))
        analytic = gradients(tracked)

        fd = finite_diff_grad(lambda p: cross_entropy(forward(p, config, x, z, 0), y).item(), dict(params))
        for name in params:
            self.assertLess(relative_error(analytic[name], fd[name]), GRAD_CHECK_TOLERANCE['float64'], name)
