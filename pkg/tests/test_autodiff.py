import numpy as np
import pytest

from rlmomentum.autodiff import Tape, Var, backward, parameter, _sigmoid
from rlmomentum.errors import TapeEmpty


def numeric_partial(f, x: np.ndarray, step=1e-6) -> np.ndarray:
    g = np.empty_like(x)
    flat = x.ravel()
    gflat = g.ravel()
    for i in range(flat.shape[0]):
        orig = flat[i]
        flat[i] = orig + step
        up = f()
        flat[i] = orig - step
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * step)
    return g


def check_unary(op_name, x, **kwargs):
    p = parameter(x.copy())
    tape = Tape()
    out = getattr(tape, op_name)(p, **kwargs)
    loss = tape.sum(tape.mul(out, tape.leaf(np.ones_like(out.value))))
    backward(tape, loss)

    def value():
        t = Tape(record=False)
        return float(t.sum(getattr(t, op_name)(p, **kwargs)).value)

    np.testing.assert_allclose(p.grad, numeric_partial(value, p.value), atol=1e-6)


class TestOps:
    def test_sum_of_params_gives_ones(self):
        p = parameter(np.arange(6.0).reshape(2, 3))
        tape = Tape()
        loss = tape.sum(p)
        backward(tape, loss)
        np.testing.assert_array_equal(p.grad, np.ones((2, 3)))

    def test_matmul_grads(self):
        rng = np.random.default_rng(0)
        a = parameter(rng.normal(size=(4, 3)))
        b = parameter(rng.normal(size=(3, 5)))
        tape = Tape()
        loss = tape.sum(tape.matmul(a, b))
        backward(tape, loss)

        def value():
            t = Tape(record=False)
            return float(t.sum(t.matmul(a, b)).value)

        np.testing.assert_allclose(a.grad, numeric_partial(value, a.value), atol=1e-6)
        np.testing.assert_allclose(b.grad, numeric_partial(value, b.value), atol=1e-6)

    def test_broadcast_add_bias(self):
        rng = np.random.default_rng(1)
        x = parameter(rng.normal(size=(4, 3)))
        b = parameter(rng.normal(size=(3,)))
        tape = Tape()
        loss = tape.sum(tape.square(tape.add(x, b)))
        backward(tape, loss)

        def value():
            t = Tape(record=False)
            return float(t.sum(t.square(t.add(x, b))).value)

        np.testing.assert_allclose(b.grad, numeric_partial(value, b.value), atol=1e-5)
        np.testing.assert_allclose(x.grad, numeric_partial(value, x.value), atol=1e-5)

    @pytest.mark.parametrize("op", ["sigmoid", "tanh", "leaky_relu", "exp", "square"])
    def test_elementwise(self, op):
        rng = np.random.default_rng(2)
        check_unary(op, rng.normal(size=(3, 4)))

    def test_log(self):
        rng = np.random.default_rng(3)
        check_unary("log", rng.uniform(0.5, 2.0, size=(3, 4)))

    def test_log_softmax(self):
        rng = np.random.default_rng(4)
        x = parameter(rng.normal(size=(5, 3)))
        coefs = rng.normal(size=(5, 3))
        tape = Tape()
        loss = tape.sum(tape.mul(tape.log_softmax(x), tape.leaf(coefs)))
        backward(tape, loss)

        def value():
            t = Tape(record=False)
            return float(t.sum(t.mul(t.log_softmax(x), t.leaf(coefs))).value)

        np.testing.assert_allclose(x.grad, numeric_partial(value, x.value), atol=1e-6)

    def test_gather_and_slices(self):
        rng = np.random.default_rng(5)
        x = parameter(rng.normal(size=(6, 4)))
        idx = np.array([0, 3, 1, 1, 2, 0])
        tape = Tape()
        picked = tape.gather_cols(x, idx)
        sliced = tape.slice_cols(x, 1, 3)
        rows = tape.slice_rows(x, 2, 5)
        loss = tape.add(
            tape.sum(tape.square(picked)),
            tape.add(tape.sum(sliced), tape.sum(tape.tanh(rows))),
        )
        loss = tape.sum(loss)
        backward(tape, loss)

        def value():
            t = Tape(record=False)
            l = t.add(
                t.sum(t.square(t.gather_cols(x, idx))),
                t.add(t.sum(t.slice_cols(x, 1, 3)), t.sum(t.tanh(t.slice_rows(x, 2, 5)))),
            )
            return float(t.sum(l).value)

        np.testing.assert_allclose(x.grad, numeric_partial(value, x.value), atol=1e-6)

    def test_concat_and_mean_cols(self):
        rng = np.random.default_rng(6)
        a = parameter(rng.normal(size=(2, 3)))
        b = parameter(rng.normal(size=(4, 3)))
        tape = Tape()
        cat = tape.concat_rows([a, b])
        loss = tape.sum(tape.square(tape.sub(cat, tape.mean_cols_keep(cat))))
        backward(tape, loss)

        def value():
            t = Tape(record=False)
            c = t.concat_rows([a, b])
            return float(t.sum(t.square(t.sub(c, t.mean_cols_keep(c)))).value)

        np.testing.assert_allclose(a.grad, numeric_partial(value, a.value), atol=1e-5)
        np.testing.assert_allclose(b.grad, numeric_partial(value, b.value), atol=1e-5)

    def test_lstm_cell_grads(self):
        rng = np.random.default_rng(7)
        pre = parameter(rng.normal(size=(3, 8)))  # hidden 2 -> got 4*2 columns
        c_prev = parameter(rng.normal(size=(3, 2)))
        coefs_h = rng.normal(size=(3, 2))
        coefs_c = rng.normal(size=(3, 2))

        def build(t):
            h, c = t.lstm_cell(pre, c_prev, 2)
            return t.add(
                t.sum(t.mul(h, t.leaf(coefs_h))), t.sum(t.mul(c, t.leaf(coefs_c)))
            )

        tape = Tape()
        loss = build(tape)
        backward(tape, loss)

        def value():
            return float(build(Tape(record=False)).value)

        np.testing.assert_allclose(pre.grad, numeric_partial(value, pre.value), atol=1e-6)
        np.testing.assert_allclose(
            c_prev.grad, numeric_partial(value, c_prev.value), atol=1e-6
        )


class TestTapeMechanics:
    def test_empty_tape_raises(self):
        with pytest.raises(TapeEmpty):
            backward(Tape(), Var(np.zeros(())))

    def test_disconnected_param_gets_no_grad(self):
        used = parameter(np.ones((2, 2)))
        unused = parameter(np.ones((2, 2)))
        tape = Tape()
        loss = tape.sum(tape.square(used))
        backward(tape, loss)
        assert unused.grad is None  # adjoint of a node off the loss path stays zero
        assert used.grad is not None

    def test_grad_accumulates_across_reuse(self):
        p = parameter(np.array([2.0]))
        tape = Tape()
        loss = tape.sum(tape.add(tape.square(p), tape.mul_const(p, 3.0)))
        backward(tape, loss)
        np.testing.assert_allclose(p.grad, [2.0 * 2.0 + 3.0])

    def test_record_false_keeps_no_nodes(self):
        p = parameter(np.ones((2, 2)))
        t = Tape(record=False)
        out = t.sum(t.tanh(p))
        assert t.nodes == []
        assert np.isfinite(out.value)


class TestStability:
    def test_sigmoid_tanh_extremes_finite(self):
        x = np.array([-1e6, -50.0, 0.0, 50.0, 1e6])
        assert np.all(np.isfinite(_sigmoid(x)))
        assert np.all(np.isfinite(np.tanh(x)))
        t = Tape()
        out = t.sigmoid(parameter(x))
        assert np.all(np.isfinite(out.value))
        np.testing.assert_allclose(out.value[[0, -1]], [0.0, 1.0], atol=1e-12)
