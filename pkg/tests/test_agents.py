import numpy as np
import pytest

from rlmomentum.agents import (
    AgentConfig,
    PolicyCheckpoint,
    ReplayBuffer,
    a2c_update,
    compute_returns,
    dqn_select,
    dqn_train_step,
    double_dqn_targets,
    gaussian_log_prob,
    greedy_positions,
    pg_update,
    target_sync,
    train,
    write_training_curve,
)
from rlmomentum.autodiff import Tape, backward, parameter
from rlmomentum.env import DISCRETE_ACTIONS
from rlmomentum.errors import EmptyBatch, EnvCountMismatch, IncompleteEpisode
from rlmomentum.network import NetworkSpec, adam_init, forward, init_params

SMALL_Q = NetworkSpec(feature_count=3, head="q3", hidden=(8, 4))


def store_with_constant_head(head, bias):
    """Zero net whose head output is exactly ``bias`` for any input."""
    spec = NetworkSpec(feature_count=3, head=head, hidden=(8, 4))
    store = init_params(spec, seed=0)
    arrays = {k: np.zeros_like(v) for k, v in store.arrays().items()}
    arrays["head.b2"] = np.asarray(bias, dtype=np.float64)
    store.load_arrays(arrays)
    return store


class TestReturns:
    def test_half_gamma_example(self):
        np.testing.assert_allclose(compute_returns([1, 1, 1], 0.5), [1.75, 1.5, 1.0])

    def test_zero_gamma_is_identity(self):
        r = [0.3, -0.2, 0.9]
        np.testing.assert_allclose(compute_returns(r, 0.0), r)

    def test_zero_rewards(self):
        np.testing.assert_array_equal(compute_returns(np.zeros(5), 0.9), np.zeros(5))


class TestReplayBuffer:
    def test_capacity_and_eviction_order(self):
        buf = ReplayBuffer(3)
        for i in range(5):
            buf.push(i)
        assert len(buf) == 3
        assert sorted(buf._data) == [2, 3, 4]  # oldest two evicted first

    def test_sample_without_replacement(self):
        buf = ReplayBuffer(10)
        for i in range(10):
            buf.push(i)
        rng = np.random.default_rng(0)
        batch = buf.sample(10, rng)
        assert sorted(batch) == list(range(10))

    def test_empty_sample_raises(self):
        with pytest.raises(EmptyBatch):
            ReplayBuffer(4).sample(2, np.random.default_rng(0))


class TestEpsilonSchedule:
    def test_monotone_non_increasing(self):
        cfg = AgentConfig.for_algo("dqn", total_steps=1000)
        values = [cfg.epsilon_at(s) for s in range(0, 1001, 10)]
        assert values[0] == 1.0
        assert values[-1] == 0.1
        assert all(a >= b for a, b in zip(values, values[1:]))
        # constant after the decay window (30% of total by default)
        assert cfg.epsilon_at(300) == cfg.epsilon_at(999) == 0.1


class TestDqnSelect:
    def test_full_exploration_uniform(self):
        store = init_params(SMALL_Q, seed=1)
        rng = np.random.default_rng(42)
        state = np.zeros((60, 3))
        counts = np.zeros(3)
        n = 30_000
        for _ in range(n):
            counts[dqn_select(store, state, 1.0, rng)] += 1
        np.testing.assert_allclose(counts / n, 1 / 3, atol=0.02)

    def test_greedy_argmax(self):
        store = store_with_constant_head("q3", [0.1, 0.9, 0.5])
        rng = np.random.default_rng(0)
        assert dqn_select(store, np.zeros((60, 3)), 0.0, rng) == 1

    def test_tie_breaks_low_index(self):
        store = store_with_constant_head("q3", [0.7, 0.7, 0.1])
        rng = np.random.default_rng(0)
        assert dqn_select(store, np.zeros((60, 3)), 0.0, rng) == 0


class TestDqnTargets:
    def test_double_dqn_hand_example(self):
        y = double_dqn_targets(
            q_next_online=np.array([[0.2, 0.9, 0.5]]),
            q_next_target=np.array([[1.0, 0.1, 0.7]]),
            rewards=np.array([1.0]),
            done=np.array([0.0]),
            gamma=0.3,
        )
        assert abs(y[0] - 1.03) < 1e-15

    def test_terminal_bootstrap_is_reward(self):
        y = double_dqn_targets(
            q_next_online=np.array([[5.0, 1.0, 0.0]]),
            q_next_target=np.array([[9.0, 9.0, 9.0]]),
            rewards=np.array([0.25]),
            done=np.array([1.0]),
            gamma=0.99,
        )
        assert y[0] == 0.25

    def test_train_step_moves_online_only(self):
        online = init_params(NetworkSpec(3, "dueling", (8, 4)), seed=3)
        target = online.copy()
        target_before = {k: v.copy() for k, v in target.arrays().items()}
        rng = np.random.default_rng(5)
        batch = [
            (rng.normal(size=(60, 3)), int(rng.integers(3)), 0.1, rng.normal(size=(60, 3)), False)
            for _ in range(8)
        ]
        cfg = AgentConfig.for_algo("dqn", batch_size=8)
        loss = dqn_train_step(online, target, batch, cfg, adam_init(online))
        assert np.isfinite(loss)
        assert not online.allclose(target)
        for k, v in target.arrays().items():
            np.testing.assert_array_equal(v, target_before[k])

    def test_empty_batch(self):
        online = init_params(NetworkSpec(3, "dueling", (8, 4)), seed=3)
        with pytest.raises(EmptyBatch):
            dqn_train_step(online, online.copy(), [], AgentConfig(), adam_init(online))


class TestTargetSync:
    def test_copies_exactly_at_tau(self):
        online = init_params(SMALL_Q, seed=1)
        target = init_params(SMALL_Q, seed=2)
        assert not online.allclose(target)
        target_sync(online, target, step=1000, tau=1000)
        assert online.allclose(target)
        # one more online update de-synchronizes until the next multiple
        online["head.b2"].value = online["head.b2"].value + 1.0
        target_sync(online, target, step=1001, tau=1000)
        assert not online.allclose(target)


class TestPolicyGradient:
    def test_zero_returns_leave_params_unchanged(self):
        actor = init_params(NetworkSpec(3, "softmax3", (8, 4)), seed=7)
        before = {k: v.copy() for k, v in actor.arrays().items()}
        episode = (
            np.zeros((4, 60, 3)),
            np.array([0, 1, 2, 1]),
            np.zeros(4),
        )
        loss = pg_update(actor, episode, AgentConfig.for_algo("pg"), adam_init(actor))
        assert loss == 0.0
        for k, v in actor.arrays().items():
            np.testing.assert_array_equal(v, before[k])

    def test_linear_toy_matches_analytic_softmax_gradient(self):
        # single step, 3-logit linear policy: d(-log pi[a] * G)/d logits
        # = (softmax - onehot(a)) * G
        rng = np.random.default_rng(8)
        w = parameter(rng.normal(size=(5, 3)))
        x = rng.normal(size=(1, 5))
        action, g_return = 2, 1.7
        tape = Tape()
        logits = tape.matmul(tape.leaf(x), w)
        logp = tape.log_softmax(logits)
        picked = tape.gather_cols(logp, np.array([action]))
        loss = tape.neg(tape.sum(tape.mul_const(picked, g_return)))
        backward(tape, loss)
        z = x @ w.value
        soft = np.exp(z - z.max())
        soft /= soft.sum()
        onehot = np.eye(3)[action]
        expected = x.T @ ((soft - onehot) * g_return)
        np.testing.assert_allclose(w.grad, expected, atol=1e-10)

    def test_update_increases_probability_of_rewarded_action(self):
        actor = init_params(NetworkSpec(3, "softmax3", (8, 4)), seed=9)
        state = np.random.default_rng(10).normal(size=(60, 3))
        episode = (state[None], np.array([2]), np.array([1.0]))

        def prob_of_action():
            logits = forward(actor, state[None])["logits"].value[0]
            e = np.exp(logits - logits.max())
            return (e / e.sum())[2]

        before = prob_of_action()
        pg_update(actor, episode, AgentConfig.for_algo("pg"), adam_init(actor))
        assert prob_of_action() > before

    def test_incomplete_episode(self):
        actor = init_params(NetworkSpec(3, "softmax3", (8, 4)), seed=7)
        with pytest.raises(IncompleteEpisode):
            pg_update(
                actor,
                (np.zeros((0, 60, 3)), np.array([]), np.array([])),
                AgentConfig.for_algo("pg"),
                adam_init(actor),
            )


class TestA2C:
    def test_advantage_hand_example(self):
        # R=0.2, gamma=0.3, V(S')=1.0, V(S)=0.5 -> advantage exactly 0
        adv = 0.2 + 0.3 * 1.0 - 0.5
        assert adv == 0.0

    def test_zero_rewards_zero_critic_fixed_point(self):
        actor = init_params(NetworkSpec(3, "gaussian", (8, 4)), seed=11)
        critic = init_params(NetworkSpec(3, "value", (8, 4)), seed=12)
        critic.load_arrays({k: np.zeros_like(v) for k, v in critic.arrays().items()})
        actor_before = {k: v.copy() for k, v in actor.arrays().items()}
        rng = np.random.default_rng(13)
        batch = [
            (rng.normal(size=(60, 3)), 0.3, 0.0, rng.normal(size=(60, 3)), False)
            for _ in range(8)
        ]
        cfg = AgentConfig.for_algo("a2c", batch_size=8, n_envs=4)
        actor_loss, critic_loss = a2c_update(
            actor, critic, batch, cfg, adam_init(actor), adam_init(critic)
        )
        # V == 0 and R == 0 make every advantage and TD target exactly zero
        assert actor_loss == 0.0
        assert critic_loss == 0.0
        for k, v in actor.arrays().items():
            np.testing.assert_array_equal(v, actor_before[k])

    def test_batch_env_alignment(self):
        actor = init_params(NetworkSpec(3, "gaussian", (8, 4)), seed=11)
        critic = init_params(NetworkSpec(3, "value", (8, 4)), seed=12)
        batch = [(np.zeros((60, 3)), 0.0, 0.0, np.zeros((60, 3)), False)] * 7
        cfg = AgentConfig.for_algo("a2c", n_envs=4)
        with pytest.raises(EnvCountMismatch):
            a2c_update(actor, critic, batch, cfg, adam_init(actor), adam_init(critic))

    def test_gaussian_log_prob_matches_closed_form(self):
        tape = Tape()
        mean = parameter(np.array([[0.2], [-0.4]]))
        log_std = parameter(np.array([-0.5]))
        actions = np.array([0.7, -1.3])
        got = gaussian_log_prob(tape, mean, log_std, actions).value[:, 0]
        sigma = np.exp(-0.5)
        want = (
            -0.5 * ((actions - mean.value[:, 0]) / sigma) ** 2
            - np.log(sigma)
            - 0.5 * np.log(2 * np.pi)
        )
        np.testing.assert_allclose(got, want, atol=1e-12)


@pytest.fixture(scope="module")
def tiny_cfg():
    return dict(
        total_steps=120,
        episode_len=30,
        batch_size=8,
        memory_size=200,
        train_every=4,
        target_sync_tau=50,
    )


class TestTraining:

    def test_zero_budget_checkpoint_equals_initialization(self, trending_contract):
        r1 = train(
            "dqn",
            [trending_contract],
            (trending_contract.series.dates[0], trending_contract.series.dates[-1]),
            AgentConfig.for_algo("dqn", total_steps=0, episode_len=30),
            __import__("rlmomentum.env", fromlist=["RewardConfig"]).RewardConfig(),
            seed=3,
        )
        r2 = train(
            "dqn",
            [trending_contract],
            (trending_contract.series.dates[0], trending_contract.series.dates[-1]),
            AgentConfig.for_algo("dqn", total_steps=0, episode_len=30),
            __import__("rlmomentum.env", fromlist=["RewardConfig"]).RewardConfig(),
            seed=3,
        )
        assert r1.curve == [] and r2.curve == []
        for role in ("online", "target"):
            assert r1.checkpoint.stores[role].allclose(r2.checkpoint.stores[role])
        assert r1.checkpoint.stores["online"].allclose(r1.checkpoint.stores["target"])

    @pytest.mark.parametrize("algo", ["dqn", "pg", "a2c"])
    def test_same_seed_identical_curves(self, algo, trending_contract, tiny_cfg):
        from rlmomentum.env import RewardConfig

        span = (trending_contract.series.dates[0], trending_contract.series.dates[-1])
        cfg = AgentConfig.for_algo(algo, **tiny_cfg)
        a = train(algo, [trending_contract], span, cfg, RewardConfig(), seed=5)
        b = train(algo, [trending_contract], span, cfg, RewardConfig(), seed=5)
        np.testing.assert_array_equal(np.array(a.curve), np.array(b.curve))
        assert all(np.isfinite(row[1]) or np.isnan(row[1]) for row in a.curve)
        for role, store in a.checkpoint.stores.items():
            assert store.allclose(b.checkpoint.stores[role])

    def test_checkpoint_roundtrip_bitwise(self, tmp_path, trending_contract, tiny_cfg):
        from rlmomentum.env import RewardConfig

        span = (trending_contract.series.dates[0], trending_contract.series.dates[-1])
        cfg = AgentConfig.for_algo("a2c", **{**tiny_cfg, "batch_size": 8, "n_envs": 4})
        result = train("a2c", [trending_contract], span, cfg, RewardConfig(), seed=6)
        path = tmp_path / "ckpt.json"
        result.checkpoint.save(path)
        loaded = PolicyCheckpoint.load(path)
        assert loaded.algo == "a2c"
        assert loaded.config == result.checkpoint.config
        for role, store in result.checkpoint.stores.items():
            assert store.allclose(loaded.stores[role])
        # greedy evaluation of a checkpoint is deterministic
        t0 = trending_contract.first_state_index
        a = greedy_positions(loaded, trending_contract, t0, t0 + 40)
        b = greedy_positions(result.checkpoint, trending_contract, t0, t0 + 40)
        np.testing.assert_array_equal(a, b)
        assert np.all(np.abs(a) <= 1.0)

    def test_training_curve_csv(self, tmp_path):
        rows = [(10, 0.5, 0.01, 1.0), (20, 0.25, 0.02, 0.9)]
        path = tmp_path / "curve.csv"
        write_training_curve(rows, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "step,loss,mean_episode_reward,epsilon"
        assert len(lines) == 3

    def test_update_cadence_counters(self, trending_contract):
        from rlmomentum.env import RewardConfig

        span = (trending_contract.series.dates[0], trending_contract.series.dates[-1])
        # PG: exactly one parameter update per completed episode
        cfg = AgentConfig.for_algo("pg", total_steps=150, episode_len=30)
        result = train("pg", [trending_contract], span, cfg, RewardConfig(), seed=9)
        episodes = len(result.curve)
        assert result.checkpoint.metadata["updates"] == episodes == 5
        # A2C: one update per full step-batch
        cfg = AgentConfig.for_algo(
            "a2c", total_steps=160, episode_len=30, batch_size=32, n_envs=4
        )
        result = train("a2c", [trending_contract], span, cfg, RewardConfig(), seed=9)
        assert result.checkpoint.metadata["updates"] == 160 // 32
        # DQN: every train_every-th step once the warm-up buffer is full
        cfg = AgentConfig.for_algo(
            "dqn", total_steps=100, episode_len=30, batch_size=8,
            memory_size=500, train_every=4,
        )
        result = train("dqn", [trending_contract], span, cfg, RewardConfig(), seed=9)
        warmup = cfg.batch_size * 4
        expected = sum(
            1 for s in range(1, cfg.total_steps + 1) if s >= warmup and s % 4 == 0
        )
        assert result.checkpoint.metadata["updates"] == expected

    def test_greedy_positions_discrete_values(self, trending_contract, tiny_cfg):
        from rlmomentum.env import RewardConfig

        span = (trending_contract.series.dates[0], trending_contract.series.dates[-1])
        cfg = AgentConfig.for_algo("dqn", **tiny_cfg)
        result = train("dqn", [trending_contract], span, cfg, RewardConfig(), seed=7)
        t0 = trending_contract.first_state_index
        positions = greedy_positions(result.checkpoint, trending_contract, t0, t0 + 30)
        assert set(np.unique(positions)) <= set(DISCRETE_ACTIONS)
