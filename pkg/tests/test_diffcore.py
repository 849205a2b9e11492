import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_array_equal

from giwr import diffcore as dc
from giwr.diffcore import Graph, ShapeError, Tensor, finite_diff_check


def rand(rng, *shape):
    return rng.normal(size=shape)


class TestForwardValues:
    def test_arithmetic_matches_numpy(self):
        rng = np.random.default_rng(0)
        a, b = rand(rng, 3, 2), rand(rng, 3, 2)
        assert_array_equal(dc.add(Tensor(a), Tensor(b)).data, a + b)
        assert_array_equal(dc.sub(Tensor(a), Tensor(b)).data, a - b)
        assert_array_equal(dc.mul(Tensor(a), Tensor(b)).data, a * b)
        assert_array_equal(dc.neg(Tensor(a)).data, -a)
        assert_array_equal(dc.square(Tensor(a)).data, a * a)
        assert_array_equal(dc.tanh(Tensor(a)).data, np.tanh(a))
        assert_array_equal(dc.relu(Tensor(a)).data, np.maximum(a, 0))
        assert_array_equal(dc.minimum(Tensor(a), Tensor(b)).data, np.minimum(a, b))

    def test_matmul_and_reductions(self):
        rng = np.random.default_rng(1)
        a, b = rand(rng, 3, 4), rand(rng, 4, 2)
        assert_array_equal(dc.matmul(Tensor(a), Tensor(b)).data, a @ b)
        assert_array_equal(dc.sum(Tensor(a)).data, a.sum())
        assert_array_equal(dc.sum(Tensor(a), axis=1).data, a.sum(axis=1))
        assert_array_equal(dc.mean(Tensor(a), axis=0).data, a.mean(axis=0))

    def test_gather_rows(self):
        table = np.arange(12.0).reshape(4, 3)
        idx = np.array([2, 0, 2])
        assert_array_equal(dc.gather_rows(Tensor(table), idx).data, table[idx])

    def test_log_rejects_nonpositive_at_op_time(self):
        with pytest.raises(ValueError, match="log"):
            dc.log(Tensor(np.array([1.0, 0.0])))
        with pytest.raises(ValueError, match="log"):
            dc.log(Tensor(np.array([-0.5])))

    def test_ops_never_mutate_inputs(self):
        rng = np.random.default_rng(2)
        a = Tensor.param(rand(rng, 3, 3))
        b = Tensor.param(rand(rng, 3, 3))
        snap_a, snap_b = a.data.copy(), b.data.copy()
        with Graph() as g:
            loss = dc.sum(dc.mul(dc.tanh(a), dc.minimum(a, b)))
            g.backward(loss)
        assert_array_equal(a.data, snap_a)
        assert_array_equal(b.data, snap_b)


class TestShapeRules:
    def test_leading_batch_broadcast_allowed(self):
        x = Tensor(np.ones((5, 3)))
        bias = Tensor(np.arange(3.0))
        out = dc.add(x, bias)
        assert out.data.shape == (5, 3)

    def test_non_leading_broadcast_rejected(self):
        with pytest.raises(ShapeError, match="add"):
            dc.add(Tensor(np.ones((3, 2))), Tensor(np.ones(3)))

    def test_matmul_shape_error_names_op(self):
        with pytest.raises(ShapeError, match="matmul"):
            dc.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_broadcast_gradient_sums_over_batch(self):
        x = Tensor(np.ones((4, 3)))
        bias = Tensor.param(np.zeros(3))
        with Graph() as g:
            grads = g.backward(dc.sum(dc.add(x, bias)))
            assert_array_equal(g.grad(grads, bias), np.full(3, 4.0))


class TestBackward:
    def test_sum_of_squares_gradient_exact(self):
        x = Tensor.param(np.array([1.0, -2.0, 3.5]))
        with Graph() as g:
            grads = g.backward(dc.sum(dc.square(x)))
            assert_array_equal(g.grad(grads, x), 2.0 * x.data)

    def test_clamp_above_gradient_branches(self):
        x = Tensor.param(np.array([10.0, 30.0]))
        with Graph() as g:
            grads = g.backward(dc.sum(dc.clamp_above(x, 20.0)))
            assert_array_equal(g.grad(grads, x), [1.0, 0.0])

    def test_minimum_tie_subgradient_goes_to_first(self):
        a = Tensor.param(np.array([1.0]))
        b = Tensor.param(np.array([1.0]))
        with Graph() as g:
            grads = g.backward(dc.sum(dc.minimum(a, b)))
            assert_array_equal(g.grad(grads, a), [1.0])
            assert_array_equal(g.grad(grads, b), [0.0])

    def test_gather_rows_accumulates_duplicates(self):
        table = Tensor.param(np.zeros((3, 2)))
        idx = np.array([1, 1, 0])
        with Graph() as g:
            grads = g.backward(dc.sum(dc.gather_rows(table, idx)))
            assert_array_equal(g.grad(grads, table), [[1.0, 1.0], [2.0, 2.0], [0.0, 0.0]])

    def test_unused_parameter_gets_exact_zero(self):
        used = Tensor.param(np.array([2.0]))
        unused = Tensor.param(np.array([5.0, 7.0]))
        with Graph() as g:
            grads = g.backward(dc.sum(dc.square(used)))
            assert_array_equal(g.grad(grads, unused), np.zeros(2))

    def test_gradient_accumulates_across_uses(self):
        x = Tensor.param(np.array([3.0]))
        with Graph() as g:
            # x appears twice: d/dx (x^2 + x) = 2x + 1.
            grads = g.backward(dc.sum(dc.add(dc.square(x), x)))
            assert_array_equal(g.grad(grads, x), [7.0])

    def test_backward_linearity(self):
        x = Tensor.param(np.array([1.5, -0.5]))
        c = Tensor(np.array([2.0, 3.0]))

        def f():
            return dc.sum(dc.square(x))

        def h():
            return dc.sum(dc.mul(x, c))

        with Graph() as g:
            gf = g.grad(g.backward(f()), x).copy()
        with Graph() as g:
            gh = g.grad(g.backward(h()), x).copy()
        with Graph() as g:
            gboth = g.grad(g.backward(dc.add(f(), h())), x)
        assert_array_equal(gboth, gf + gh)

    def test_rerun_bit_identical(self):
        def run():
            rng = np.random.default_rng(7)
            x = Tensor.param(rng.normal(size=(4, 3)))
            w = Tensor.param(rng.normal(size=(3, 2)))
            with Graph() as g:
                loss = dc.mean(dc.square(dc.tanh(dc.matmul(x, w))))
                grads = g.backward(loss)
                return loss.data.copy(), g.grad(grads, w).copy()

        la, ga = run()
        lb, gb = run()
        assert la.tobytes() == lb.tobytes()
        assert ga.tobytes() == gb.tobytes()

    def test_loss_must_be_scalar(self):
        x = Tensor.param(np.ones(3))
        with Graph() as g:
            vec = dc.square(x)
            with pytest.raises(ValueError, match="one element"):
                g.backward(vec)

    def test_loss_from_other_graph_rejected(self):
        x = Tensor.param(np.ones(1))
        with Graph() as g:
            loss = dc.sum(x)
        with Graph() as g2:
            with pytest.raises(ValueError):
                g2.backward(loss)

    def test_graphs_do_not_nest(self):
        with Graph():
            with pytest.raises(RuntimeError, match="nest"):
                with Graph():
                    pass

    def test_inference_mode_results_are_constants(self):
        x = Tensor.param(np.array([2.0]))
        frozen = dc.square(x)  # no active graph: plain value
        with Graph() as g:
            grads = g.backward(dc.sum(dc.mul(frozen, x)))
            # d/dx (4 * x) = 4, nothing flows through the frozen factor.
            assert_array_equal(g.grad(grads, x), [4.0])


class TestFiniteDiffAllPrimitives:
    """Central-difference check of every primitive's backward rule."""

    def check(self, f, params, tol=1e-4):
        assert finite_diff_check(f, params) < tol

    def test_add_sub_mul_neg(self):
        rng = np.random.default_rng(10)
        a = Tensor.param(rand(rng, 3, 2))
        b = Tensor.param(rand(rng, 3, 2))
        c = Tensor(rand(rng, 3, 2))
        self.check(lambda: dc.sum(dc.mul(dc.add(a, b), dc.sub(a, dc.neg(b)))), [a, b])
        self.check(lambda: dc.sum(dc.mul(dc.mul(a, c), b)), [a, b])

    def test_broadcast_bias(self):
        rng = np.random.default_rng(11)
        x = Tensor(rand(rng, 5, 3))
        bias = Tensor.param(rand(rng, 3))
        scale = Tensor(rand(rng, 5, 3))
        self.check(lambda: dc.sum(dc.mul(dc.add(x, bias), scale)), [bias])

    def test_matmul(self):
        rng = np.random.default_rng(12)
        a = Tensor.param(rand(rng, 4, 3))
        b = Tensor.param(rand(rng, 3, 2))
        mask = Tensor(rand(rng, 4, 2))
        self.check(lambda: dc.sum(dc.mul(dc.matmul(a, b), mask)), [a, b])

    def test_exp_log_square(self):
        rng = np.random.default_rng(13)
        a = Tensor.param(rand(rng, 6) * 0.5)
        pos = Tensor.param(np.abs(rand(rng, 6)) + 0.5)
        self.check(lambda: dc.sum(dc.exp(a)), [a])
        self.check(lambda: dc.sum(dc.log(pos)), [pos])
        self.check(lambda: dc.sum(dc.square(a)), [a])

    def test_tanh_relu_softplus(self):
        rng = np.random.default_rng(14)
        # Keep relu inputs away from the kink where central differences lie.
        a = Tensor.param(np.where(np.abs(rand(rng, 8)) < 0.05, 0.2, rand(rng, 8)))
        self.check(lambda: dc.sum(dc.tanh(a)), [a])
        self.check(lambda: dc.sum(dc.relu(a)), [a])
        self.check(lambda: dc.sum(dc.softplus(a)), [a])

    def test_reductions(self):
        rng = np.random.default_rng(15)
        a = Tensor.param(rand(rng, 4, 3))
        w0 = Tensor(rand(rng, 3))
        w1 = Tensor(rand(rng, 4))
        self.check(lambda: dc.sum(dc.mul(dc.mean(a, axis=0), w0)), [a])
        self.check(lambda: dc.sum(dc.mul(dc.sum(a, axis=1), w1)), [a])
        self.check(lambda: dc.mean(a), [a])

    def test_minimum_and_clamp(self):
        rng = np.random.default_rng(16)
        raw_a, raw_b = rand(rng, 6), rand(rng, 6)
        # Separate the operands so no coordinate sits on the tie kink.
        raw_b = np.where(np.abs(raw_a - raw_b) < 0.05, raw_a + 0.3, raw_b)
        a, b = Tensor.param(raw_a), Tensor.param(raw_b)
        self.check(lambda: dc.sum(dc.minimum(a, b)), [a, b])
        c = Tensor.param(np.array([-1.0, 0.4, 1.7]))
        self.check(lambda: dc.sum(dc.clamp_above(c, 0.8)), [c])

    def test_gather_rows_param_table(self):
        rng = np.random.default_rng(17)
        table = Tensor.param(rand(rng, 5, 3))
        idx = np.array([0, 2, 2, 4])
        mask = Tensor(rand(rng, 4, 3))
        self.check(lambda: dc.sum(dc.mul(dc.gather_rows(table, idx), mask)), [table])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_property_composite_gradcheck(seed):
    rng = np.random.default_rng(seed)
    x = Tensor.param(rng.normal(size=(3, 2)))
    w = Tensor.param(rng.normal(size=(2, 2)))
    y = Tensor(rng.normal(size=(3, 2)))

    def f():
        h = dc.tanh(dc.matmul(x, w))
        return dc.mean(dc.square(dc.sub(h, y)))

    assert finite_diff_check(f, [x, w]) < 1e-4


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_property_grad_shape_matches_param(seed):
    rng = np.random.default_rng(seed)
    shape = tuple(rng.integers(1, 5, size=2))
    p = Tensor.param(rng.normal(size=shape))
    with Graph() as g:
        grads = g.backward(dc.sum(dc.exp(dc.mul(p, 0.1))))
        assert g.grad(grads, p).shape == shape
