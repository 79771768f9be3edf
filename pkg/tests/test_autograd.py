"""Reverse-mode gradients against central finite differences.

Everything runs in float64 with step 1e-5.  The finite-difference oracle
perturbs one coordinate at a time and never looks at the backward graph, so
agreement means the closed-form backward rules are right.
"""

import numpy as np
import pytest

from mirep.autograd import (Tensor, constant, dropout, gelu, layer_norm,
                            parameter, softmax)

STEP = 1e-5
TOL = 1e-7


def fd_grad(fn, x: np.ndarray) -> np.ndarray:
    """Central finite differences of a scalar-valued fn, one coordinate at a time."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + STEP
        up = fn()
        flat[i] = keep - STEP
        dn = fn()
        flat[i] = keep
        gf[i] = (up - dn) / (2 * STEP)
    return g


def check_op(build, *shapes, seed=0):
    """build(*tensors) -> Tensor; compares backward() with finite differences."""
    rng = np.random.default_rng(seed)
    arrays = [rng.standard_normal(s) * 0.8 + 0.1 for s in shapes]
    tensors = [parameter(a, f"p{i}") for i, a in enumerate(arrays)]

    out = build(*tensors)
    loss = out.sum() if out.data.ndim else out
    loss.backward()

    for t, a in zip(tensors, arrays):
        def scalar():
            fresh = [Tensor(arr, requires_grad=False) for arr in arrays]
            o = build(*fresh)
            return float(o.data.sum())
        want = fd_grad(scalar, a)
        np.testing.assert_allclose(t.grad, want, atol=TOL + 1e-4 * np.abs(want).max(),
                                   rtol=1e-4)


class TestArithmetic:
    def test_add(self):
        check_op(lambda a, b: a + b, (3, 4), (3, 4))

    def test_add_broadcast(self):
        check_op(lambda a, b: a + b, (3, 4), (4,))

    def test_add_broadcast_leading(self):
        check_op(lambda a, b: a + b, (2, 3, 4), (1, 3, 1))

    def test_sub(self):
        check_op(lambda a, b: a - b, (2, 5), (2, 5))

    def test_rsub_scalar(self):
        check_op(lambda a: 1.0 - a, (4,))

    def test_mul(self):
        check_op(lambda a, b: a * b, (3, 3), (3, 3))

    def test_mul_broadcast(self):
        check_op(lambda a, b: a * b, (2, 3), (3,))

    def test_div(self):
        # keep the denominator away from zero
        check_op(lambda a, b: a / (b * b + 1.0), (3,), (3,))

    def test_pow(self):
        check_op(lambda a: (a * a + 1.0) ** 1.5, (4,))

    def test_neg(self):
        check_op(lambda a: -a, (3,))


class TestMatmulAndShape:
    def test_matmul_2d(self):
        check_op(lambda a, b: a @ b, (3, 4), (4, 2))

    def test_matmul_batched(self):
        check_op(lambda a, b: a @ b, (2, 3, 4), (2, 4, 5))

    def test_matmul_broadcast_weight(self):
        check_op(lambda a, b: a @ b, (2, 3, 4), (4, 5))

    def test_reshape(self):
        check_op(lambda a: (a.reshape(6) * np.arange(6.0)).sum(), (2, 3))

    def test_transpose(self):
        check_op(lambda a, b: a.transpose(1, 0) @ b, (4, 3), (4, 2))

    def test_getitem_slice(self):
        check_op(lambda a: (a[1:, :2] * 2.0).sum(), (3, 4))

    def test_getitem_int(self):
        check_op(lambda a: (a[1] * np.arange(4.0)).sum(), (3, 4))

    def test_fancy_indexing_rejected(self):
        a = parameter(np.zeros((3, 3)), "a")
        with pytest.raises(TypeError):
            a[np.array([0, 1])]


class TestReductions:
    def test_sum_all(self):
        check_op(lambda a: a.sum(), (3, 4))

    def test_sum_axis_keepdims(self):
        check_op(lambda a: (a.sum(axis=1, keepdims=True) * a).sum(), (3, 4))

    def test_mean_axis(self):
        check_op(lambda a: (a.mean(axis=0) ** 2.0).sum(), (5, 3))


class TestElementwise:
    def test_exp(self):
        check_op(lambda a: a.exp(), (3, 3))

    def test_log(self):
        check_op(lambda a: (a * a + 1.0).log(), (4,))

    def test_sqrt(self):
        check_op(lambda a: (a * a + 1.0).sqrt(), (4,))

    def test_erf(self):
        check_op(lambda a: a.erf(), (5,))

    def test_gelu(self):
        check_op(lambda a: gelu(a), (4, 4))

    def test_gelu_matches_definition(self):
        from scipy.special import erf as serf
        x = np.linspace(-3, 3, 31)
        got = gelu(Tensor(x)).data
        want = 0.5 * x * (1.0 + serf(x / np.sqrt(2.0)))
        np.testing.assert_allclose(got, want, atol=1e-12)


class TestComposites:
    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(1)
        s = softmax(Tensor(rng.standard_normal((4, 7)))).data
        np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-12)

    def test_softmax_grad(self):
        check_op(lambda a: (softmax(a) * np.arange(5.0)).sum(), (3, 5))

    def test_softmax_shift_invariant(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((2, 6))
        a = softmax(Tensor(x)).data
        b = softmax(Tensor(x + 1000.0)).data
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_layer_norm_output_stats(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((4, 16))
        g = np.ones(16)
        b = np.zeros(16)
        out = layer_norm(Tensor(x), Tensor(g), Tensor(b)).data
        np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-10)
        np.testing.assert_allclose(out.std(axis=-1), 1.0, atol=1e-4)

    def test_layer_norm_grad(self):
        check_op(lambda x, g, b: (layer_norm(x, g, b) * 0.5).sum(),
                 (2, 8), (8,), (8,))

    def test_dropout_eval_is_identity(self):
        x = Tensor(np.ones((3, 3)))
        out = dropout(x, 0.5, None, train=False)
        np.testing.assert_array_equal(out.data, x.data)

    def test_dropout_scales_survivors(self):
        rng = np.random.default_rng(4)
        x = Tensor(np.ones((100, 100)))
        out = dropout(x, 0.25, rng, train=True).data
        vals = np.unique(out)
        assert set(np.round(vals, 10)) <= {0.0, round(1 / 0.75, 10)}
        # survivor rate within 3 sigma of 0.75
        p_hat = (out != 0).mean()
        assert abs(p_hat - 0.75) < 3 * np.sqrt(0.25 * 0.75 / out.size)


class TestGraphMechanics:
    def test_diamond_reuse_accumulates(self):
        # y = a*a + a*a reuses `a` on two paths; gradient must be 4a
        a = parameter(np.array([1.5, -2.0]), "a")
        y = (a * a + a * a).sum()
        y.backward()
        np.testing.assert_allclose(a.grad, 4 * a.data, atol=1e-12)

    def test_deep_chain_no_recursion_error(self):
        a = parameter(np.array([0.5]), "a")
        x = a
        for _ in range(3000):
            x = x + 0.0
        x.sum().backward()
        np.testing.assert_allclose(a.grad, 1.0)

    def test_affine_closed_form(self):
        # loss = sum(W x + b) has dW = x^T broadcast across rows, db = ones
        rng = np.random.default_rng(5)
        w = parameter(rng.standard_normal((3, 4)), "w")
        b = parameter(rng.standard_normal((3, 1)), "b")
        x = constant(rng.standard_normal((4, 1)))
        (w @ x + b).sum().backward()
        np.testing.assert_allclose(w.grad, np.tile(x.data.T, (3, 1)), atol=1e-12)
        np.testing.assert_allclose(b.grad, np.ones((3, 1)), atol=1e-12)

    def test_backward_requires_scalar(self):
        a = parameter(np.ones((2, 2)), "a")
        with pytest.raises(ValueError):
            (a * 2).backward()

    def test_grad_accumulates_across_backward_calls(self):
        a = parameter(np.array([2.0]), "a")
        (a * 3.0).sum().backward()
        (a * 3.0).sum().backward()
        np.testing.assert_allclose(a.grad, [6.0])

    def test_zero_grad(self):
        a = parameter(np.array([2.0]), "a")
        (a * 3.0).sum().backward()
        a.zero_grad()
        assert a.grad is None or not a.grad.any()

    def test_detach_blocks_gradient(self):
        a = parameter(np.array([1.0, 2.0]), "a")
        (a.detach() * a).sum().backward()
        np.testing.assert_allclose(a.grad, a.data)  # only the live branch
