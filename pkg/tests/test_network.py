import numpy as np
import pytest

from rlmomentum.errors import NonFiniteInput, ShapeMismatch
from rlmomentum.network import (
    NetworkSpec,
    adam_init,
    adam_step,
    default_spec,
    dueling_aggregate,
    forward,
    global_norm_clip,
    init_params,
    load_params,
    param_shapes,
    save_params,
)
from util_grad import max_relative_error

SMALL = NetworkSpec(feature_count=3, head="q3", hidden=(8, 4))


def small_spec(head):
    return NetworkSpec(feature_count=3, head=head, hidden=(8, 4))


class TestInit:
    def test_same_seed_bit_identical(self):
        a = init_params(SMALL, seed=4)
        b = init_params(SMALL, seed=4)
        assert a.allclose(b)
        c = init_params(SMALL, seed=5)
        assert not a.allclose(c)

    def test_forget_gate_bias_ones(self):
        store = init_params(SMALL, seed=1)
        for layer, h in ((1, 8), (2, 4)):
            b = store[f"lstm{layer}.b"].value
            np.testing.assert_array_equal(b[h : 2 * h], 1.0)
            np.testing.assert_array_equal(b[:h], 0.0)
            np.testing.assert_array_equal(b[2 * h :], 0.0)

    def test_weights_within_fan_in_bound(self):
        store = init_params(default_spec("dueling"), seed=2)
        for name, var in store.params.items():
            if var.value.ndim == 2:
                bound = 1.0 / np.sqrt(var.value.shape[0])
                assert np.all(np.abs(var.value) <= bound), name

    def test_log_std_init(self):
        store = init_params(small_spec("gaussian"), seed=3)
        np.testing.assert_array_equal(store["log_std"].value, [-0.5])

    def test_param_count_is_function_of_shape(self):
        total = sum(int(np.prod(s)) for _, s in param_shapes(SMALL))
        assert init_params(SMALL, seed=0).total_count() == total


class TestForward:
    def test_zero_params_give_zero_head(self):
        store = init_params(SMALL, seed=1)
        store.load_arrays({k: np.zeros_like(v) for k, v in store.arrays().items()})
        out = forward(store, np.random.default_rng(0).normal(size=(2, 60, 3)))
        np.testing.assert_array_equal(out["q"].value, 0.0)

    def test_purity_and_determinism(self):
        store = init_params(SMALL, seed=1)
        before = {k: v.copy() for k, v in store.arrays().items()}
        w = np.random.default_rng(1).normal(size=(3, 60, 3))
        a = forward(store, w)["q"].value
        b = forward(store, w)["q"].value
        np.testing.assert_array_equal(a, b)
        for k, v in store.arrays().items():
            np.testing.assert_array_equal(v, before[k])

    def test_constant_input_hidden_state_converges(self):
        store = init_params(small_spec("value"), seed=6)
        w = np.tile(np.array([0.3, -0.1, 0.7]), (1, 120, 1))
        out = forward(store, w, return_hidden=True)
        hs = out["hidden_seq"][:, 0, :]
        early = np.linalg.norm(hs[1] - hs[0])
        late = np.linalg.norm(hs[-1] - hs[-2])
        assert late < early

    def test_rejects_non_finite(self):
        store = init_params(SMALL, seed=1)
        w = np.zeros((1, 60, 3))
        w[0, 5, 1] = np.nan
        with pytest.raises(NonFiniteInput):
            forward(store, w)

    def test_input_conditioning_applied(self):
        # identical states except RSI=0 vs RSI=100 must differ; conditioning
        # keeps the branch centered rather than saturating the gates
        spec = default_spec("q3")
        store = init_params(spec, seed=9)
        w = np.zeros((1, 60, 7))
        lo = w.copy()
        hi = w.copy()
        hi[:, :, 6] = 100.0
        assert not np.array_equal(
            forward(store, lo)["q"].value, forward(store, hi)["q"].value
        )

    def test_dueling_constant_advantage_shift_invariant(self):
        v = np.array([[2.0]])
        adv = np.array([[1.0, 0.0, -1.0]])
        np.testing.assert_array_equal(dueling_aggregate(v, adv), [[3.0, 2.0, 1.0]])
        shifted = dueling_aggregate(v, adv + 7.0)
        np.testing.assert_allclose(shifted, [[3.0, 2.0, 1.0]], atol=1e-12)


class TestGradients:
    @pytest.mark.parametrize("head", ["q3", "dueling", "softmax3", "value", "gaussian"])
    def test_finite_difference_agreement(self, head):
        store = init_params(small_spec(head), seed=11)
        windows = np.random.default_rng(12).normal(size=(2, 60, 3))
        assert max_relative_error(store, windows, seed=13) < 1e-4

    def test_unused_head_branch_gets_zero_grad(self):
        # value-branch bias of the dueling head is always used; mean-subtracted
        # advantage bias gradient cancels only via the aggregation, so instead
        # check a param absent from the loss path: gaussian log_std under a
        # mean-only loss.
        from rlmomentum.autodiff import Tape, backward

        store = init_params(small_spec("gaussian"), seed=14)
        tape = Tape()
        out = forward(store, np.zeros((2, 60, 3)), tape)
        loss = tape.sum(out["mean"])
        store.zero_grads()
        backward(tape, loss)
        np.testing.assert_array_equal(store.grads()["log_std"], 0.0)


class TestAdam:
    def test_zero_grad_keeps_params_increments_step(self):
        store = init_params(SMALL, seed=1)
        before = {k: v.copy() for k, v in store.arrays().items()}
        state = adam_init(store)
        zero = {k: np.zeros_like(v) for k, v in store.arrays().items()}
        adam_step(store, zero, state, lr=0.01)
        assert state.step == 1
        for k, v in store.arrays().items():
            np.testing.assert_array_equal(v, before[k])

    def test_first_step_scalar_oracle(self):
        # g=1, lr=0.001: delta = -lr * mhat / (sqrt(vhat) + eps) = -0.001/(1+1e-8)
        spec = NetworkSpec(feature_count=1, head="value", hidden=(1, 1))
        store = init_params(spec, seed=0)
        state = adam_init(store)
        start = store["head.b2"].value.copy()
        grads = {k: np.zeros_like(v) for k, v in store.arrays().items()}
        grads["head.b2"] = np.ones(1)
        adam_step(store, grads, state, lr=0.001)
        delta = store["head.b2"].value[0] - start[0]
        assert abs(delta - (-0.001 / (1.0 + 1e-8))) < 1e-15

    def test_two_steps_match_sequential_oracle(self):
        spec = NetworkSpec(feature_count=1, head="value", hidden=(1, 1))
        store = init_params(spec, seed=0)
        state = adam_init(store)
        g_seq = [0.5, -1.25]
        # independent scalar recurrence
        theta = store["head.b2"].value[0]
        m = v = 0.0
        for i, g in enumerate(g_seq, start=1):
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            mhat = m / (1 - 0.9**i)
            vhat = v / (1 - 0.999**i)
            theta -= 0.01 * mhat / (np.sqrt(vhat) + 1e-8)
        for g in g_seq:
            grads = {k: np.zeros_like(a) for k, a in store.arrays().items()}
            grads["head.b2"] = np.array([g])
            adam_step(store, grads, state, lr=0.01)
        assert abs(store["head.b2"].value[0] - theta) < 1e-12

    def test_shape_mismatch(self):
        store = init_params(SMALL, seed=1)
        state = adam_init(store)
        grads = {k: np.zeros_like(v) for k, v in store.arrays().items()}
        grads["head.b2"] = np.zeros(7)
        with pytest.raises(ShapeMismatch):
            adam_step(store, grads, state, lr=0.01)


class TestClip:
    def test_norm_clip(self):
        grads = {"a": np.array([3.0]), "b": np.array([4.0])}
        clipped = global_norm_clip(grads, 1.0)
        total = np.sqrt(sum(float(np.sum(g * g)) for g in clipped.values()))
        assert abs(total - 1.0) < 1e-12
        untouched = global_norm_clip(grads, 100.0)
        np.testing.assert_array_equal(untouched["a"], grads["a"])


class TestCheckpointFile:
    def test_save_load_bitwise(self, tmp_path):
        store = init_params(default_spec("dueling"), seed=21)
        path = tmp_path / "params.csv"
        save_params(store, path)
        loaded = load_params(path)
        assert loaded.spec == store.spec
        for k, v in store.arrays().items():
            np.testing.assert_array_equal(v, loaded.arrays()[k])

    def test_rejects_garbage(self, tmp_path):
        path = tmp_path / "params.csv"
        path.write_text("not a params file\n")
        with pytest.raises(ShapeMismatch):
            load_params(path)
