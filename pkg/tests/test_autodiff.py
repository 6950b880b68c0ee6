import numpy as np
import pytest

from bigraphdiff.autodiff import (
    Tensor, affine, concat, gelu, layer_norm, no_grad, softmax,
)
from bigraphdiff.errors import ShapeError

from conftest import central_difference, relative_error


def naive_matmul(a, b):
    m, n = a.shape
    n2, p = b.shape
    out = np.zeros((m, p))
    for i in range(m):
        for j in range(p):
            for k in range(n):
                out[i, j] += a[i, k] * b[k, j]
    return out


class TestMatmul:
    def test_identity(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal((a @ Tensor(np.eye(2))).data, a.data)

    def test_hand_case(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        b = Tensor([[5.0, 6.0], [7.0, 8.0]])
        expected = naive_matmul(a.data, b.data)
        assert np.array_equal(expected, [[19.0, 22.0], [43.0, 50.0]])
        assert np.allclose((a @ b).data, expected, atol=1e-12)

    def test_against_loop_oracle_random_shapes(self, rng):
        for _ in range(100):
            m, n, p = rng.integers(1, 9, size=3)
            a = rng.standard_normal((m, n))
            b = rng.standard_normal((n, p))
            got = (Tensor(a) @ Tensor(b)).data
            assert np.abs(got - naive_matmul(a, b)).max() < 1e-10

    def test_grad_of_sum_is_column_sums(self, rng):
        a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        b = Tensor(rng.standard_normal((4, 5)), requires_grad=True)
        (a @ b).sum().backward()
        assert np.allclose(a.grad, np.tile(b.data.sum(axis=1), (3, 1)))
        assert np.allclose(b.grad, np.tile(a.data.sum(axis=0)[:, None], (1, 5)))

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            Tensor(np.zeros((2, 3))) @ Tensor(np.zeros((2, 3)))


class TestSoftmax:
    def test_symmetry(self):
        assert np.allclose(softmax(Tensor([0.0, 0.0]), axis=0).data, [0.5, 0.5])

    def test_shift_invariance(self, rng):
        x = rng.standard_normal(7)
        for c in (-100.0, 3.5, 1e4):
            a = softmax(Tensor(x), axis=0).data
            b = softmax(Tensor(x + c), axis=0).data
            assert np.abs(a - b).max() < 1e-12

    def test_hand_case(self):
        out = softmax(Tensor([0.0, np.log(3.0)]), axis=0).data
        assert np.allclose(out, [0.25, 0.75], atol=1e-12)

    def test_rows_sum_to_one(self, rng):
        x = rng.standard_normal((5, 6)) * 30.0
        out = softmax(Tensor(x), axis=1).data
        assert np.abs(out.sum(axis=1) - 1.0).max() < 1e-12
        assert (out > 0).all()

    def test_no_overflow_on_large_inputs(self):
        out = softmax(Tensor([1e6, 0.0, -1e6]), axis=0).data
        assert np.isfinite(out).all()

    def test_invalid_axis(self):
        with pytest.raises(ShapeError):
            softmax(Tensor([1.0, 2.0]), axis=3)

    def test_gradient(self, rng):
        x = rng.standard_normal((3, 4))
        w = rng.standard_normal((3, 4))

        def loss():
            t = Tensor(x, requires_grad=True)
            return float((softmax(t, axis=1) * Tensor(w)).sum().data)

        t = Tensor(x, requires_grad=True)
        (softmax(t, axis=1) * Tensor(w)).sum().backward()
        fd = central_difference(lambda: loss(), x, range(12))
        for i, d in fd.items():
            assert relative_error(t.grad.ravel()[i], d) < 1e-4


class TestAffine:
    def test_identity(self, rng):
        x = rng.standard_normal((4, 3))
        w = Tensor(np.eye(3), requires_grad=True)
        b = Tensor(np.zeros(3), requires_grad=True)
        assert np.allclose(affine(Tensor(x), w, b).data, x)

    def test_hand_case(self):
        y = affine(Tensor([1.0, 2.0]), Tensor([[1.0, 0.0], [0.0, 2.0]]),
                   Tensor([1.0, 1.0]))
        assert np.allclose(y.data, [2.0, 5.0])

    def test_batched_leading_dims(self, rng):
        x = rng.standard_normal((2, 5, 3))
        w = rng.standard_normal((3, 4))
        b = rng.standard_normal(4)
        y = affine(Tensor(x), Tensor(w), Tensor(b)).data
        assert y.shape == (2, 5, 4)
        assert np.allclose(y, x @ w + b)

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            affine(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))),
                   Tensor(np.zeros(5)))

    def test_gradient_matches_finite_differences(self, rng):
        x = rng.standard_normal((4, 3))
        w_arr = rng.standard_normal((3, 2))
        b_arr = rng.standard_normal(2)

        def loss():
            w = Tensor(w_arr)
            b = Tensor(b_arr)
            return float((affine(Tensor(x), w, b) ** 2).sum().data)

        w = Tensor(w_arr, requires_grad=True)
        b = Tensor(b_arr, requires_grad=True)
        (affine(Tensor(x), w, b) ** 2).sum().backward()
        for arr, grad in ((w_arr, w.grad), (b_arr, b.grad)):
            fd = central_difference(loss, arr, range(arr.size))
            for i, d in fd.items():
                assert relative_error(grad.ravel()[i], d) < 1e-4


class TestLayerNorm:
    def test_constant_row_maps_to_zero(self):
        x = Tensor(np.full((2, 5), 3.7))
        out = layer_norm(x, Tensor(np.ones(5)), Tensor(np.zeros(5)))
        assert np.abs(out.data).max() < 1e-6

    def test_two_point_row(self):
        out = layer_norm(Tensor([[1.0, -1.0]]), Tensor(np.ones(2)),
                         Tensor(np.zeros(2)), eps=1e-12)
        assert np.allclose(out.data, [[1.0, -1.0]], atol=1e-6)

    def test_standardizes(self, rng):
        x = rng.standard_normal((6, 16)) * 5 + 2
        out = layer_norm(Tensor(x), Tensor(np.ones(16)), Tensor(np.zeros(16))).data
        assert np.abs(out.mean(axis=1)).max() < 1e-12
        assert np.abs(out.var(axis=1) - 1.0).max() < 1e-3

    def test_gradient(self, rng):
        x_arr = rng.standard_normal((3, 5))
        g_arr = rng.standard_normal(5)
        b_arr = rng.standard_normal(5)

        def loss():
            out = layer_norm(Tensor(x_arr), Tensor(g_arr), Tensor(b_arr))
            return float((out ** 2).sum().data)

        x = Tensor(x_arr, requires_grad=True)
        g = Tensor(g_arr, requires_grad=True)
        b = Tensor(b_arr, requires_grad=True)
        (layer_norm(x, g, b) ** 2).sum().backward()
        for arr, grad in ((x_arr, x.grad), (g_arr, g.grad), (b_arr, b.grad)):
            fd = central_difference(loss, arr, range(arr.size))
            for i, d in fd.items():
                assert relative_error(grad.ravel()[i], d) < 1e-4


class TestGelu:
    def test_zero(self):
        assert gelu(Tensor(0.0)).data == 0.0

    def test_asymptote(self):
        assert abs(gelu(Tensor(10.0)).data - 10.0) < 1e-6

    def test_unit(self):
        assert abs(gelu(Tensor(1.0)).data - 0.841345) < 1e-6

    def test_gradient(self, rng):
        x_arr = rng.standard_normal(20) * 2

        def loss():
            return float((gelu(Tensor(x_arr)) ** 2).sum().data)

        x = Tensor(x_arr, requires_grad=True)
        (gelu(x) ** 2).sum().backward()
        fd = central_difference(loss, x_arr, range(20))
        for i, d in fd.items():
            assert relative_error(x.grad[i], d) < 1e-4


class TestGraph:
    def test_unreached_parameter_gets_no_grad(self):
        p = Tensor([1.0, 2.0], requires_grad=True)
        q = Tensor([3.0], requires_grad=True)
        (p * p).sum().backward()
        assert np.allclose(p.grad, 2 * p.data)
        assert q.grad is None

    def test_sum_of_squares(self, rng):
        p = Tensor(rng.standard_normal(7), requires_grad=True)
        (p ** 2).sum().backward()
        assert np.allclose(p.grad, 2 * p.data, atol=1e-12)

    def test_non_scalar_backward_rejected(self):
        with pytest.raises(ShapeError):
            Tensor([1.0, 2.0], requires_grad=True).backward()

    def test_fanout_accumulates(self):
        p = Tensor(3.0, requires_grad=True)
        y = p * p + p * 2.0
        y.backward()
        assert np.allclose(p.grad, 2 * 3.0 + 2.0)

    def test_no_grad_disables_recording(self):
        p = Tensor(2.0, requires_grad=True)
        with no_grad():
            y = p * p
        assert not y.requires_grad
        assert y._backward is None

    def test_concat_and_narrow_roundtrip(self, rng):
        a = Tensor(rng.standard_normal((2, 3)), requires_grad=True)
        b = Tensor(rng.standard_normal((2, 2)), requires_grad=True)
        cat = concat([a, b], axis=1)
        assert cat.shape == (2, 5)
        cat.narrow(1, 0, 3).sum().backward()
        assert np.allclose(a.grad, np.ones((2, 3)))
        assert np.allclose(b.grad, np.zeros((2, 2)))

    def test_no_nan_from_finite_inputs(self, rng):
        x = Tensor(rng.standard_normal((4, 8)) * 100)
        ops = [
            softmax(x, axis=1), gelu(x),
            layer_norm(x, Tensor(np.ones(8)), Tensor(np.zeros(8))),
        ]
        for out in ops:
            assert np.isfinite(out.data).all()
