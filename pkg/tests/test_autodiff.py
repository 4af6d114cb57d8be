"""Forward values, backward gradients, and graph plumbing for the autodiff core."""

import numpy as np
import pytest

from flowcast import DimensionError, NumericError, ValidationError
from flowcast.autodiff import (
    DiffTensor,
    ParamRegistry,
    absolute,
    add,
    concat_lastdim,
    constant,
    elementwise,
    matmul,
    mul,
    normalize_rows,
    parameter,
    reduce,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    sigmoid,
    slice_lastdim,
    softmax_lastdim,
    stack,
    sub,
    tanh,
    transpose_last2,
)


def fd_grad(f, x, eps=1e-6):
    """Central-difference gradient of scalar f with respect to array x."""
    g = np.zeros_like(x, dtype=float)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        gf[i] = (fp - fm) / (2 * eps)
    return g


class TestForwardValues:
    def test_matmul_identity(self):
        a = np.arange(9.0).reshape(3, 3)
        out = matmul(constant(a), constant(np.eye(3)))
        np.testing.assert_array_equal(out.values, a)

    def test_matmul_row_times_column(self):
        out = matmul(constant([[1.0, 2.0]]), constant([[3.0], [4.0]]))
        np.testing.assert_array_equal(out.values, [[11.0]])

    def test_sigmoid_at_zero(self):
        assert sigmoid(constant(0.0)).values == 0.5

    def test_tanh_at_one(self):
        assert abs(tanh(constant(1.0)).values - 0.761594) < 1e-6

    def test_relu_negative(self):
        x = parameter(np.array(-2.0))
        y = relu(x)
        assert y.values == 0.0
        y.backward()
        assert x.grad == 0.0

    def test_softmax_known_pair(self):
        out = softmax_lastdim(constant([0.0, np.log(3.0)]))
        np.testing.assert_allclose(out.values, [0.25, 0.75], atol=1e-12)

    def test_softmax_shift_invariance(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(4, 6))
        a = softmax_lastdim(constant(x)).values
        b = softmax_lastdim(constant(x + 123.456)).values
        np.testing.assert_allclose(a, b, atol=1e-12)
        np.testing.assert_allclose(a.sum(axis=-1), 1.0, atol=1e-12)

    def test_mean(self):
        assert reduce_mean(constant([1.0, 2.0, 3.0, 4.0])).values == 2.5

    def test_concat_slice_round_trip(self):
        rng = np.random.default_rng(3)
        a, b = rng.normal(size=(2, 5)), rng.normal(size=(2, 3))
        cat = concat_lastdim([constant(a), constant(b)])
        np.testing.assert_array_equal(slice_lastdim(cat, 0, 5).values, a)
        np.testing.assert_array_equal(slice_lastdim(cat, 5, 8).values, b)

    def test_sigmoid_extreme_inputs_stay_finite(self):
        out = sigmoid(constant([-1e4, -50.0, 0.0, 50.0, 1e4]))
        assert np.isfinite(out.values).all()
        assert out.values[0] == 0.0 or out.values[0] < 1e-300
        assert out.values[-1] == 1.0

    def test_normalize_rows_stochastic(self):
        rng = np.random.default_rng(11)
        x = rng.uniform(0.1, 2.0, size=(6, 6))
        out = normalize_rows(constant(x)).values
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-12)

    def test_normalize_rows_zero_row_stays_zero(self):
        x = np.array([[1.0, 3.0], [0.0, 0.0]])
        out = normalize_rows(constant(x)).values
        np.testing.assert_allclose(out[0], [0.25, 0.75], atol=1e-15)
        np.testing.assert_array_equal(out[1], [0.0, 0.0])


class TestBackward:
    """Every differentiable op agrees with central differences."""

    @pytest.mark.parametrize("op", [tanh, sigmoid, absolute])
    def test_unary_smooth(self, op):
        rng = np.random.default_rng(hash(op.__name__) % 2**32)
        x = parameter(rng.normal(size=(3, 4)) + 0.1)  # keep |x| off the abs kink
        w = rng.normal(size=(3, 4))

        def loss():
            return float((op(DiffTensor(x.values, requires_grad=False)).values * w).sum())

        out = reduce_sum(mul(op(x), constant(w)))
        out.backward()
        np.testing.assert_allclose(x.grad, fd_grad(loss, x.values), atol=1e-7)

    def test_relu_grad(self):
        x = parameter(np.array([-2.0, -0.5, 0.5, 2.0]))
        reduce_sum(relu(x)).backward()
        np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0, 1.0])

    @pytest.mark.parametrize("shapes", [((3, 4), (3, 4)), ((3, 4), (4,)), ((3, 4), (1, 4)), ((2, 3, 4), (3, 4))])
    @pytest.mark.parametrize("op", [add, sub, mul])
    def test_binary_broadcast(self, op, shapes):
        rng = np.random.default_rng(5)
        sa, sb = shapes
        a, b = parameter(rng.normal(size=sa)), parameter(rng.normal(size=sb))
        w = rng.normal(size=np.broadcast_shapes(sa, sb))
        reduce_sum(mul(op(a, b), constant(w))).backward()

        np_op = {add: np.add, sub: np.subtract, mul: np.multiply}[op]
        np.testing.assert_allclose(a.grad, fd_grad(lambda: float((np_op(a.values, b.values) * w).sum()), a.values), atol=1e-6)
        np.testing.assert_allclose(b.grad, fd_grad(lambda: float((np_op(a.values, b.values) * w).sum()), b.values), atol=1e-6)

    @pytest.mark.parametrize("shapes", [((3, 4), (4, 5)), ((2, 3, 4), (4, 5)), ((2, 3, 4), (2, 4, 5)), ((1, 3, 4), (6, 4, 5))])
    def test_matmul_batched(self, shapes):
        rng = np.random.default_rng(9)
        sa, sb = shapes
        a, b = parameter(rng.normal(size=sa)), parameter(rng.normal(size=sb))
        w = rng.normal(size=np.matmul(a.values, b.values).shape)
        reduce_sum(mul(matmul(a, b), constant(w))).backward()

        np.testing.assert_allclose(a.grad, fd_grad(lambda: float((a.values @ b.values * w).sum()), a.values), atol=1e-6)
        np.testing.assert_allclose(b.grad, fd_grad(lambda: float((a.values @ b.values * w).sum()), b.values), atol=1e-6)

    def test_softmax_grad(self):
        rng = np.random.default_rng(13)
        x = parameter(rng.normal(size=(3, 5)))
        w = rng.normal(size=(3, 5))
        reduce_sum(mul(softmax_lastdim(x), constant(w))).backward()

        def loss():
            e = np.exp(x.values - x.values.max(axis=-1, keepdims=True))
            return float((e / e.sum(axis=-1, keepdims=True) * w).sum())

        np.testing.assert_allclose(x.grad, fd_grad(loss, x.values), atol=1e-6)

    def test_normalize_rows_grad(self):
        rng = np.random.default_rng(17)
        x = parameter(rng.uniform(0.2, 1.5, size=(4, 4)))
        w = rng.normal(size=(4, 4))
        reduce_sum(mul(normalize_rows(x), constant(w))).backward()

        def loss():
            return float((x.values / x.values.sum(axis=-1, keepdims=True) * w).sum())

        np.testing.assert_allclose(x.grad, fd_grad(loss, x.values), atol=1e-6)

    @pytest.mark.parametrize("axis,keepdims", [(None, False), (0, False), (1, True), (-1, False)])
    @pytest.mark.parametrize("red", [reduce_sum, reduce_mean])
    def test_reductions(self, red, axis, keepdims):
        rng = np.random.default_rng(21)
        x = parameter(rng.normal(size=(3, 4)))
        out = red(x, axis=axis, keepdims=keepdims)
        w = rng.normal(size=out.shape)
        reduce_sum(mul(out, constant(w))).backward()

        np_red = np.sum if red is reduce_sum else np.mean

        def loss():
            return float((np_red(x.values, axis=axis, keepdims=keepdims) * w).sum())

        np.testing.assert_allclose(x.grad, fd_grad(loss, x.values), atol=1e-6)

    def test_concat_slice_stack_reshape_transpose_grads(self):
        rng = np.random.default_rng(23)
        a, b = parameter(rng.normal(size=(2, 3))), parameter(rng.normal(size=(2, 2)))

        def graph():
            cat = concat_lastdim([a, b])                # (2, 5)
            piece = slice_lastdim(cat, 1, 4)            # (2, 3)
            st = stack([piece, piece], axis=0)          # (2, 2, 3)
            r = reshape(st, (4, 3))
            return reduce_sum(mul(transpose_last2(r), transpose_last2(r)))

        graph().backward()

        def loss():
            cat = np.concatenate([a.values, b.values], axis=-1)
            piece = cat[:, 1:4]
            st = np.stack([piece, piece], axis=0).reshape(4, 3)
            return float((st.T ** 2).sum())

        np.testing.assert_allclose(a.grad, fd_grad(loss, a.values), atol=1e-6)
        np.testing.assert_allclose(b.grad, fd_grad(loss, b.values), atol=1e-6)

    def test_grad_accumulates_on_reuse(self):
        x = parameter(np.array([3.0]))
        y = add(mul(x, x), x)  # x^2 + x -> grad 2x + 1 = 7
        reduce_sum(y).backward()
        np.testing.assert_allclose(x.grad, [7.0])

    def test_diamond_graph(self):
        x = parameter(np.array(2.0))
        a = mul(x, x)          # x^2
        out = add(mul(a, a), a)  # x^4 + x^2 -> 4x^3 + 2x = 36
        out.backward()
        np.testing.assert_allclose(x.grad, 36.0)

    def test_backward_twice_accumulates(self):
        x = parameter(np.array(1.5))
        mul(x, x).backward()
        g1 = float(x.grad)
        mul(x, x).backward()
        assert float(x.grad) == pytest.approx(2 * g1)

    def test_deep_chain_no_recursion_limit(self):
        x = parameter(np.array(0.5))
        y = x
        for _ in range(5000):
            y = add(y, constant(0.0))
        y.backward()
        assert float(x.grad) == 1.0

    def test_constant_subgraph_pruned(self):
        c = mul(constant(2.0), constant(3.0))
        assert not c.requires_grad
        x = parameter(np.array(1.0))
        out = mul(x, c)
        out.backward()
        assert float(x.grad) == 6.0
        assert c._grad is None  # nothing flowed into the grad-free branch


class TestErrorsAndRegistry:
    def test_matmul_inner_mismatch(self):
        with pytest.raises(DimensionError, match="inner dimensions"):
            matmul(constant(np.zeros((2, 3))), constant(np.zeros((4, 2))))

    def test_broadcast_mismatch(self):
        with pytest.raises(DimensionError, match="broadcast"):
            add(constant(np.zeros((2, 3))), constant(np.zeros((4,))))

    def test_backward_needs_scalar_or_seed(self):
        x = parameter(np.ones((2, 2)))
        with pytest.raises(DimensionError):
            mul(x, x).backward()
        mul(x, x).backward(seed=np.ones((2, 2)))  # explicit seed is fine
        np.testing.assert_array_equal(x.grad, 2 * np.ones((2, 2)))

    def test_elementwise_dispatch(self):
        x = constant([1.0, -1.0])
        np.testing.assert_array_equal(elementwise("relu", x).values, [1.0, 0.0])
        np.testing.assert_array_equal(elementwise("add", x, x).values, [2.0, -2.0])
        with pytest.raises(ValidationError):
            elementwise("nope", x)

    def test_reduce_dispatch(self):
        x = constant([[1.0, 3.0]])
        assert reduce("sum", x).values == 4.0
        assert reduce("mean", x).values == 2.0
        with pytest.raises(ValidationError):
            reduce("max", x)

    def test_registry_unique_names_and_state(self):
        reg = ParamRegistry()
        w = reg.register("w", np.ones((2, 2)))
        reg.register("b", np.zeros(2))
        with pytest.raises(ValidationError):
            reg.register("w", np.ones(1))
        assert reg.n_elements() == 6
        state = reg.state_dict()
        w.values[:] = 5.0
        reg.load_state(state)
        np.testing.assert_array_equal(reg["w"].values, np.ones((2, 2)))
        with pytest.raises(ValidationError):
            reg.load_state({"w": state["w"]})  # missing "b"

    def test_registry_zero_grads(self):
        reg = ParamRegistry()
        x = reg.register("x", np.array([2.0]))
        reduce_sum(mul(x, x)).backward()
        assert float(x.grad[0]) != 0.0
        reg.zero_grads()
        np.testing.assert_array_equal(x.grad, [0.0])
