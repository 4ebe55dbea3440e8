"""
Test the tape tensor core.

"""

from unittest import TestCase

import numpy as np
from parameterized import parameterized

from autograd import gradcheck
from autograd.tensor import (
    DomainError,
    ShapeError,
    Tape,
    TapeError,
    Tensor,
    backward,
    concat,
    no_grad,
    stop_gradient,
)

GRADCHECK_CASES = 100


def _positive(rng, shape):
    return rng.uniform(0.5, 2.0, size=shape)


def _dims(rng, count):
    return tuple(int(d) for d in rng.integers(1, 5, size=count))


def _normal(rng, count):
    return rng.normal(size=_dims(rng, count))


def _row_broadcast(rng, b_maker=None):
    rows, cols = _dims(rng, 2)
    second = b_maker(rng, (cols,)) if b_maker else rng.normal(size=(cols,))
    return [rng.normal(size=(rows, cols)), second]


def _column_broadcast(rng):
    rows, cols = _dims(rng, 2)
    return [rng.normal(size=(rows, cols)), rng.normal(size=(rows, 1))]


def _matmul(rng, batch=False):
    n, k, m = _dims(rng, 3)
    lead = _dims(rng, 1) if batch else ()
    return [rng.normal(size=lead + (n, k)), rng.normal(size=(k, m))]


class TestTensor(TestCase):
    def test_construct(self):
        tensor = Tensor([1, 2, 3], requires_grad=True, name="x")
        self.assertEqual(tensor.data.dtype, np.float64)
        self.assertEqual(tensor.shape, (3,))
        np.testing.assert_array_equal(tensor.grad, np.zeros(3))
        self.assertTrue(tensor.is_leaf)
        self.assertIsNone(Tensor(1.0).grad)

    def test_construct__non_finite(self):
        with self.assertRaises(DomainError):
            Tensor([1.0, np.nan])
        with self.assertRaises(DomainError):
            Tensor([np.inf])

    def test_item(self):
        self.assertEqual(Tensor([[2.5]]).item(), 2.5)
        with self.assertRaises(ShapeError):
            Tensor([1.0, 2.0]).item()

    def test_add__mul__broadcast_grads(self):
        a = Tensor(np.ones((2, 3)), requires_grad=True)
        b = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
        backward((a * b + b).sum())
        np.testing.assert_allclose(a.grad, np.tile([1.0, 2.0, 3.0], (2, 1)))
        np.testing.assert_allclose(b.grad, [4.0, 4.0, 4.0])

    def test_shared_input(self):
        x = Tensor(3.0, requires_grad=True)
        backward(x * x + x)
        self.assertAlmostEqual(float(x.grad), 7.0)

    def test_matmul__batched(self):
        x = Tensor(np.arange(12.0).reshape(2, 3, 2))
        w = Tensor(np.ones((2, 4)), requires_grad=True)
        out = x @ w
        self.assertEqual(out.shape, (2, 3, 4))
        backward(out.sum())
        np.testing.assert_allclose(w.grad, np.full((2, 4), 0.0) + x.data.reshape(-1, 2).sum(axis=0)[:, None])

    def test_matmul__shape_error(self):
        with self.assertRaises(ShapeError):
            Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))

    def test_broadcast_error(self):
        with self.assertRaises(ShapeError):
            Tensor(np.ones((2, 3))) + Tensor(np.ones((4,)))

    def test_log__domain(self):
        with self.assertRaises(DomainError):
            Tensor([1.0, 0.0]).log()
        with self.assertRaises(DomainError):
            Tensor([-1.0]).log()

    def test_div__by_zero(self):
        with self.assertRaises(DomainError):
            Tensor([1.0]) / Tensor([0.0])

    def test_exp__overflow(self):
        with self.assertRaises(DomainError):
            Tensor([1000.0]).exp()

    def test_log_sigmoid__stable(self):
        value = Tensor([-800.0, 0.0, 800.0]).log_sigmoid().data
        self.assertTrue(np.isfinite(value).all())
        self.assertAlmostEqual(value[1], -np.log(2.0))
        self.assertAlmostEqual(value[2], 0.0)

    def test_slice(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        backward(x[..., 1:].sum())
        np.testing.assert_array_equal(x.grad, [[0, 1, 1], [0, 1, 1]])

    def test_concat(self):
        a = Tensor(np.ones((2, 2)), requires_grad=True)
        b = Tensor(np.ones((2, 1)), requires_grad=True)
        out = concat([a, b], axis=1)
        self.assertEqual(out.shape, (2, 3))
        backward((out * Tensor([1.0, 2.0, 3.0])).sum())
        np.testing.assert_array_equal(a.grad, [[1, 2], [1, 2]])
        np.testing.assert_array_equal(b.grad, [[3], [3]])

    def test_reshape(self):
        x = Tensor(np.arange(6.0), requires_grad=True)
        self.assertEqual(x.reshape(2, 3).shape, (2, 3))
        self.assertEqual(x.reshape((3, 2)).shape, (3, 2))
        with self.assertRaises(ShapeError):
            x.reshape(4, 2)

    def test_stop_gradient(self):
        x = Tensor([2.0], requires_grad=True)
        y = stop_gradient(x * 3.0)
        self.assertFalse(y.requires_grad)
        z = x * 2.0 + y * x
        backward(z.sum())
        # y is a constant 6: d/dx (2x + 6x) = 8
        np.testing.assert_allclose(x.grad, [8.0])

    def test_no_grad(self):
        x = Tensor([1.0], requires_grad=True)
        with no_grad():
            y = x * 2.0
        self.assertFalse(y.requires_grad)
        self.assertTrue(y.is_leaf)
        self.assertTrue((x * 2.0).requires_grad)

    def test_backward__not_scalar(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with self.assertRaises(TapeError):
            backward(x * 2.0)

    def test_backward__empty_tape(self):
        with self.assertRaises(TapeError):
            backward(Tensor(1.0))

    def test_backward__twice(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        loss = (x * x).sum()
        backward(loss)
        with self.assertRaises(TapeError):
            backward(loss)

    def test_tape_order(self):
        x = Tensor([1.0], requires_grad=True)
        loss = ((x * 2.0).exp() + x).sum()
        tape = Tape.collect(loss)
        seqs = [record.seq for record in tape.records]
        self.assertEqual(seqs, sorted(seqs))
        self.assertEqual(len(tape), 4)


class TestGradients(TestCase):
    """
    Central finite differences against the tape, many random cases per op.

    """

    @parameterized.expand(
        [
            # name, function, input maker
            ("add", lambda a, b: (a + b).sum(), _row_broadcast),
            ("sub", lambda a, b: (a - b).sum(), _column_broadcast),
            ("mul", lambda a, b: (a * b).sum(), _row_broadcast),
            ("div", lambda a, b: (a / b).sum(), lambda rng: _row_broadcast(rng, _positive)),
            ("matmul", lambda a, b: (a @ b).sum(), _matmul),
            ("matmul_batched", lambda a, b: ((a @ b) * (a @ b)).mean(),
             lambda rng: _matmul(rng, batch=True)),
            ("neg", lambda a: (-a * a).sum(), lambda rng: [_normal(rng, 1)]),
            ("exp", lambda a: a.exp().sum(), lambda rng: [_normal(rng, 2)]),
            ("log", lambda a: a.log().sum(), lambda rng: [_positive(rng, _dims(rng, 2))]),
            ("pow", lambda a: (a ** 2.5).sum(), lambda rng: [_positive(rng, _dims(rng, 1))]),
            ("relu", lambda a: (a.relu() * a).sum(), lambda rng: [_normal(rng, 1)]),
            ("sigmoid", lambda a: a.sigmoid().sum(), lambda rng: [_normal(rng, 2)]),
            ("log_sigmoid", lambda a: a.log_sigmoid().sum(), lambda rng: [_normal(rng, 2) * 4]),
            ("softmax", lambda a: (a.softmax() * Tensor([1.0, 2.0, 3.0])).sum(),
             lambda rng: [rng.normal(size=(2, 3))]),
            ("log_softmax", lambda a: (a.log_softmax() * Tensor([1.0, -2.0, 0.5])).sum(),
             lambda rng: [rng.normal(size=(2, 3))]),
            ("sum_axis", lambda a: (a.sum(axis=1) ** 2).sum(), lambda rng: [_normal(rng, 2)]),
            ("mean_axis", lambda a: (a.mean(axis=0) ** 2).sum(), lambda rng: [_normal(rng, 2)]),
            ("broadcast_to", lambda a: (a.broadcast_to((3, 2)) * Tensor(np.arange(6.0).reshape(3, 2))).sum(),
             lambda rng: [rng.normal(size=(1, 2))]),
            ("reshape", lambda a: (a.reshape(3, 2) * Tensor(np.arange(6.0).reshape(3, 2))).sum(),
             lambda rng: [rng.normal(size=(2, 3))]),
            ("slice", lambda a: (a[..., :2] * a[..., 1:]).sum(), lambda rng: [rng.normal(size=(2, 3))]),
            ("concat", lambda a, b: (concat([a, b], axis=1) ** 2).sum(),
             lambda rng: [rng.normal(size=(2, 2)), rng.normal(size=(2, 1))]),
        ]
    )
    def test_gradcheck(self, name, fn, make_inputs):
        rng = np.random.default_rng(sum(name.encode()))
        worst = 0.0
        for _ in range(GRADCHECK_CASES):
            worst = max(worst, gradcheck.check_gradients(fn, make_inputs(rng), h=1e-5))
        self.assertLess(worst, 1e-4, name)

    def test_relative_error(self):
        self.assertEqual(gradcheck.relative_error(np.array([2.0]), np.array([2.0])), 0.0)
        self.assertAlmostEqual(gradcheck.relative_error(np.array([0.5]), np.array([0.4])), 0.1)
        self.assertAlmostEqual(gradcheck.relative_error(np.array([10.0]), np.array([9.0])), 0.1)
