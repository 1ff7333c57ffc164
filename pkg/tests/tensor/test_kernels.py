import unittest

import numpy as np
import pytest

from molpretrain.errors import AutogradError, ShapeError, SkipBatch
from molpretrain.tensor import Tensor, current_tape, grad_check, no_grad, precision
from molpretrain.tensor import functional as F


class TestForward(unittest.TestCase):
    def test_softmax_uniform(self):
        y = F.softmax(Tensor(np.zeros((1, 3))))
        np.testing.assert_allclose(y.data, [[1 / 3, 1 / 3, 1 / 3]], atol=1e-6)

    def test_softmax_rows_sum_to_one(self):
        x = Tensor(np.random.default_rng(0).normal(size=(4, 7)) * 10)
        np.testing.assert_allclose(F.softmax(x).data.sum(axis=-1), 1.0, atol=1e-6)

    def test_softmax_mask(self):
        mask = np.array([[True, True, False]])
        y = F.softmax(Tensor(np.array([[1.0, 1.0, 50.0]])), mask)
        np.testing.assert_allclose(y.data, [[0.5, 0.5, 0.0]], atol=1e-6)

    def test_layer_norm_constant_row(self):
        x = Tensor(np.full((2, 5), 3.0))
        out = F.layer_norm(x, Tensor(np.ones(5)), Tensor(np.zeros(5)))
        np.testing.assert_array_equal(out.data, np.zeros((2, 5)))

    def test_cross_entropy_correct_prediction(self):
        logits = Tensor(np.array([[50.0, 0.0, 0.0], [0.0, 50.0, 0.0]]))
        self.assertLess(F.cross_entropy(logits, np.array([0, 1])).item(), 1e-6)

    def test_cross_entropy_all_ignored(self):
        with self.assertRaises(SkipBatch):
            F.cross_entropy(Tensor(np.zeros((2, 3))), np.array([F.IGNORE_INDEX, F.IGNORE_INDEX]))

    def test_dropout_eval_is_identity(self):
        x = Tensor(np.ones((3, 3)))
        self.assertIs(F.dropout(x, 0.5, None, training=False), x)

    def test_shape_errors(self):
        with self.assertRaises(ShapeError):
            F.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 3))))
        with self.assertRaises(ShapeError):
            F.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


class TestBackward(unittest.TestCase):
    def test_sum(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        x.sum().backward()
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_square(self):
        data = np.array([1.0, -2.0, 0.5])
        x = Tensor(data, requires_grad=True)
        (x * x).sum().backward()
        np.testing.assert_allclose(x.grad, 2 * data)

    def test_tape_is_cleared(self):
        x = Tensor(np.ones(3), requires_grad=True)
        loss = (x * x).sum()
        self.assertGreater(len(current_tape()), 0)
        loss.backward()
        self.assertEqual(len(current_tape()), 0)
        with self.assertRaises(AutogradError):
            loss.backward()

    def test_no_grad_records_nothing(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            y = (x * x).sum()
        self.assertFalse(y.requires_grad)
        self.assertEqual(len(current_tape()), 0)

    def test_non_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with self.assertRaises(AutogradError):
            (x * x).backward()
        current_tape().clear()


def _rand(shape, seed):
    with precision(np.float64):
        return Tensor(np.random.default_rng(seed).normal(size=shape), requires_grad=True)


def test_linear_function_is_exact():
    a = _rand((3, 4), 0)
    w = np.random.default_rng(1).normal(size=(3, 4))
    assert grad_check(lambda x: (x * Tensor(w, dtype=np.float64)).sum(), [a]) < 1e-10


def test_three_layer_mlp():
    x = _rand((5, 6), 0)
    w1, w2, w3 = _rand((6, 8), 1), _rand((8, 8), 2), _rand((8, 1), 3)

    def loss(w1, w2, w3):
        h = F.gelu(x @ w1)
        h = F.gelu(h @ w2)
        return ((h @ w3) * (h @ w3)).mean()

    assert grad_check(loss, [w1, w2, w3], floor=1e-6) < 1e-4


def test_softmax_cross_entropy_composite():
    logits = _rand((6, 5), 4)
    targets = np.array([0, 4, 2, F.IGNORE_INDEX, 1, 3])
    assert grad_check(lambda z: F.cross_entropy(z, targets), [logits], h=1e-5) < 1e-6


@pytest.mark.parametrize(
    "kernel",
    [
        lambda x, g, b: (F.layer_norm(x, g, b) * F.layer_norm(x, g, b)).sum(),
        lambda x, g, b: (F.softmax(x) * F.softmax(x)).sum(),
        lambda x, g, b: F.mse(x, np.ones((4, 6)), np.array([1, 1, 0, 1, 1, 1])),
        lambda x, g, b: (F.reshape(F.transpose(x), (24,)) * F.reshape(F.transpose(x), (24,))).sum(),
        lambda x, g, b: (x[1:3] * x[1:3]).mean(),
    ],
)
def test_kernel_gradients(kernel):
    x, gamma, beta = _rand((4, 6), 5), _rand((6,), 6), _rand((6,), 7)
    assert grad_check(kernel, [x, gamma, beta], h=1e-5, floor=1e-5) < 1e-4


def test_embedding_gradient_accumulates_repeats():
    weight = _rand((5, 3), 8)
    ids = np.array([[0, 2, 2], [4, 0, 1]])
    assert grad_check(lambda w: (F.embedding(w, ids) * F.embedding(w, ids)).sum(), [weight], h=1e-5) < 1e-6
