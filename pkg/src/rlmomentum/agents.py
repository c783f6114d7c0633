"""The three trading agents: DQN, Monte-Carlo policy gradients, and A2C.

DQN uses all three stabilizers together (frozen target network, double
action selection, dueling value/advantage head) with uniform experience
replay.  PG updates once per finished episode from full discounted returns.
A2C runs synchronized parallel environment cursors with a continuous
Gaussian policy and one-step TD advantages.

All training is single-threaded and deterministic under a seed.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .autodiff import Tape, backward
from .env import DISCRETE_ACTIONS, ActionSpace, RewardConfig, TradingEnv
from .errors import (
    DivergedLoss,
    EmptyBatch,
    EnvCountMismatch,
    IncompleteEpisode,
    InsufficientHistory,
    ShapeMismatch,
)
from .indicators import ContractFeatures, FEATURE_NAMES
from .market_data import WalkForwardSplit
from .network import (
    AdamState,
    NetworkSpec,
    ParamStore,
    adam_init,
    adam_step,
    default_spec,
    forward,
    global_norm_clip,
    init_params,
)

ALGOS = ("dqn", "pg", "a2c")

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class AgentConfig:
    """Hyperparameters; constructor defaults follow the DQN column."""

    algo: str = "dqn"
    gamma: float = 0.3
    lr_actor: float = 0.0001
    lr_critic: float = 0.0001
    batch_size: int = 64
    bp_train: float = 0.0020
    memory_size: int = 5000
    target_sync_tau: int = 1000
    eps_start: float = 1.0
    eps_end: float = 0.1
    eps_decay_steps: int | None = None  # default: 30% of total_steps
    n_envs: int = 4
    entropy_coef: float = 0.0
    grad_clip: float = 1.0
    total_steps: int = 100_000
    episode_len: int = 252
    train_every: int = 1

    def __post_init__(self):
        if self.algo not in ALGOS:
            raise ShapeMismatch(f"unknown algo {self.algo!r}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ShapeMismatch("gamma must be in [0, 1]")

    @staticmethod
    def for_algo(algo: str, **overrides) -> "AgentConfig":
        base = {
            "dqn": dict(algo="dqn", lr_critic=0.0001, batch_size=64),
            "pg": dict(algo="pg", lr_actor=0.0001),
            "a2c": dict(algo="a2c", lr_critic=0.001, lr_actor=0.0001, batch_size=128),
        }[algo]
        base.update(overrides)
        return AgentConfig(**base)

    def epsilon_at(self, step: int) -> float:
        decay = self.eps_decay_steps
        if decay is None:
            decay = max(1, int(0.3 * self.total_steps))
        if step >= decay:
            return self.eps_end
        frac = max(0.0, step / decay)
        return self.eps_start + (self.eps_end - self.eps_start) * frac


def compute_returns(rewards, gamma: float) -> np.ndarray:
    """Discounted reward-to-go by reverse accumulation."""
    rewards = np.asarray(rewards, dtype=np.float64)
    out = np.empty_like(rewards)
    acc = 0.0
    for t in range(rewards.shape[0] - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        out[t] = acc
    return out


class ReplayBuffer:
    """Fixed-capacity ring of transitions; oldest evicted first."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ShapeMismatch("capacity must be >= 1")
        self.capacity = capacity
        self._data: list = []
        self._pos = 0

    def push(self, transition) -> None:
        if len(self._data) < self.capacity:
            self._data.append(transition)
        else:
            self._data[self._pos] = transition
        self._pos = (self._pos + 1) % self.capacity

    def __len__(self) -> int:
        return len(self._data)

    def sample(self, batch_size: int, rng: np.random.Generator) -> list:
        """Uniform sample without replacement within the batch."""
        if len(self._data) == 0:
            raise EmptyBatch("replay buffer is empty")
        batch_size = min(batch_size, len(self._data))
        idx = rng.choice(len(self._data), size=batch_size, replace=False)
        return [self._data[i] for i in idx]


# -- DQN ------------------------------------------------------------------------


def dqn_select(
    store: ParamStore, state_matrix: np.ndarray, epsilon: float, rng: np.random.Generator
) -> int:
    """Epsilon-greedy over the Q head; argmax ties break to the lowest index."""
    if rng.random() < epsilon:
        return int(rng.integers(0, 3))
    q = forward(store, state_matrix[None])["q"].value[0]
    return int(np.argmax(q))


def double_dqn_targets(
    q_next_online: np.ndarray,
    q_next_target: np.ndarray,
    rewards: np.ndarray,
    done: np.ndarray,
    gamma: float,
) -> np.ndarray:
    """y = r + gamma * Q_target(S', argmax_a Q_online(S', a)); r on terminals."""
    a_star = np.argmax(q_next_online, axis=1)
    boot = q_next_target[np.arange(q_next_target.shape[0]), a_star]
    return rewards + gamma * boot * (1.0 - done)


def _stack_batch(batch):
    states = np.stack([b[0] for b in batch])
    actions = np.array([b[1] for b in batch])
    rewards = np.array([b[2] for b in batch], dtype=np.float64)
    next_states = np.stack([b[3] for b in batch])
    done = np.array([float(b[4]) for b in batch])
    return states, actions, rewards, next_states, done


def dqn_train_step(
    online: ParamStore,
    target: ParamStore,
    batch: list,
    cfg: AgentConfig,
    adam: AdamState,
) -> float:
    """One MSE step of the online net toward double-DQN targets."""
    if not batch:
        raise EmptyBatch("dqn_train_step needs a non-empty batch")
    states, actions, rewards, next_states, done = _stack_batch(batch)
    q_next_online = forward(online, next_states)["q"].value
    q_next_target = forward(target, next_states)["q"].value
    y = double_dqn_targets(q_next_online, q_next_target, rewards, done, cfg.gamma)

    tape = Tape()
    q = forward(online, states, tape)["q"]
    q_a = tape.gather_cols(q, actions)
    loss = tape.mean(tape.square(tape.sub(q_a, tape.leaf(y))))
    online.zero_grads()
    backward(tape, loss)
    grads = global_norm_clip(online.grads(), cfg.grad_clip)
    adam_step(online, grads, adam, cfg.lr_critic)
    value = float(loss.value)
    if not np.isfinite(value):
        raise DivergedLoss(f"dqn loss became {value}")
    return value


def target_sync(online: ParamStore, target: ParamStore, step: int, tau: int) -> None:
    """Hard-copy online weights into the target net every ``tau`` steps."""
    if tau < 1:
        raise ShapeMismatch("tau must be >= 1")
    if step % tau == 0:
        target.load_arrays(online.arrays())


# -- policy gradients -------------------------------------------------------------


def pg_sample_action(
    store: ParamStore, state_matrix: np.ndarray, rng: np.random.Generator
) -> int:
    logits = forward(store, state_matrix[None])["logits"].value[0]
    shifted = logits - logits.max()
    probs = np.exp(shifted)
    probs /= probs.sum()
    return int(rng.choice(3, p=probs))


def pg_update(
    actor: ParamStore,
    episode: tuple[np.ndarray, np.ndarray, np.ndarray],
    cfg: AgentConfig,
    adam: AdamState,
) -> float:
    """One gradient-ascent step on sum_t log pi(A_t|S_t) * G_t for a full episode."""
    states, actions, rewards = episode
    if len(states) == 0 or not (len(states) == len(actions) == len(rewards)):
        raise IncompleteEpisode("episode arrays empty or misaligned")
    returns = compute_returns(rewards, cfg.gamma)

    tape = Tape()
    logits = forward(actor, np.asarray(states), tape)["logits"]
    logp = tape.log_softmax(logits)
    logp_a = tape.gather_cols(logp, np.asarray(actions))
    loss = tape.neg(tape.sum(tape.mul(logp_a, tape.leaf(returns))))
    actor.zero_grads()
    backward(tape, loss)
    grads = global_norm_clip(actor.grads(), cfg.grad_clip)
    adam_step(actor, grads, adam, cfg.lr_actor)
    value = float(loss.value)
    if not np.isfinite(value):
        raise DivergedLoss(f"pg loss became {value}")
    return value


# -- A2C -------------------------------------------------------------------------


def gaussian_log_prob(tape: Tape, mean, log_std, actions_raw: np.ndarray):
    """log N(a; mean, exp(log_std)^2) built on the tape, shape (batch, 1)."""
    diff = tape.sub(tape.leaf(actions_raw.reshape(-1, 1)), mean)
    z = tape.mul(diff, tape.exp(tape.mul_const(log_std, -1.0)))
    halfsq = tape.mul_const(tape.square(z), 0.5)
    return tape.mul_const(
        tape.add_const(tape.add(halfsq, log_std), 0.5 * _LOG_2PI), -1.0
    )


def a2c_update(
    actor: ParamStore,
    critic: ParamStore,
    batch: list,
    cfg: AgentConfig,
    adam_actor: AdamState,
    adam_critic: AdamState,
) -> tuple[float, float]:
    """Separate Adam steps: critic on squared TD error, actor on the
    advantage-weighted log-likelihood (advantage held constant)."""
    if not batch:
        raise EmptyBatch("a2c_update needs a non-empty batch")
    if len(batch) % cfg.n_envs != 0:
        raise EnvCountMismatch(
            f"batch of {len(batch)} does not align with n_envs={cfg.n_envs}"
        )
    states, actions_raw, rewards, next_states, done = _stack_batch(batch)

    v_next = forward(critic, next_states)["v"].value[:, 0]
    targets = rewards + cfg.gamma * v_next * (1.0 - done)

    tape_c = Tape()
    v = forward(critic, states, tape_c)["v"]
    critic_loss = tape_c.sum(tape_c.square(tape_c.sub(v, tape_c.leaf(targets[:, None]))))
    critic.zero_grads()
    backward(tape_c, critic_loss)
    grads_c = global_norm_clip(critic.grads(), cfg.grad_clip)
    adam_step(critic, grads_c, adam_critic, cfg.lr_critic)

    advantage = targets - v.value[:, 0]

    tape_a = Tape()
    out = forward(actor, states, tape_a)
    logp = gaussian_log_prob(tape_a, out["mean"], out["log_std"], actions_raw)
    weighted = tape_a.mul(logp, tape_a.leaf(advantage[:, None]))
    actor_loss = tape_a.neg(tape_a.sum(weighted))
    if cfg.entropy_coef > 0.0:
        entropy = tape_a.mul_const(
            tape_a.sum(tape_a.add_const(out["log_std"], 0.5 * (_LOG_2PI + 1.0))),
            float(len(batch)),
        )
        actor_loss = tape_a.sub(actor_loss, tape_a.mul_const(entropy, cfg.entropy_coef))
    actor.zero_grads()
    backward(tape_a, actor_loss)
    grads_a = global_norm_clip(actor.grads(), cfg.grad_clip)
    adam_step(actor, grads_a, adam_actor, cfg.lr_actor)

    a_loss, c_loss = float(actor_loss.value), float(critic_loss.value)
    if not (np.isfinite(a_loss) and np.isfinite(c_loss)):
        raise DivergedLoss(f"a2c losses became ({a_loss}, {c_loss})")
    return a_loss, c_loss


def a2c_sample_actions(
    actor: ParamStore, states: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Raw Gaussian samples around tanh(mean) and their [-1, 1] clamp."""
    out = forward(actor, states)
    mu = out["mean"].value[:, 0]
    sigma = float(np.exp(out["log_std"].value[0]))
    raw = mu + sigma * rng.standard_normal(mu.shape[0])
    return raw, np.clip(raw, -1.0, 1.0)


# -- checkpoints -------------------------------------------------------------------

_CHECKPOINT_FORMAT = "rlmomentum-checkpoint.v1"


@dataclass
class PolicyCheckpoint:
    """Frozen trained parameters plus the config and provenance metadata."""

    algo: str
    stores: dict[str, ParamStore]
    config: AgentConfig
    metadata: dict = field(default_factory=dict)

    def save(self, path: str | Path) -> None:
        doc = {
            "format": _CHECKPOINT_FORMAT,
            "algo": self.algo,
            "config": asdict(self.config),
            "metadata": self.metadata,
            "stores": {
                role: {
                    "spec": json.loads(store.spec.to_json()),
                    "arrays": {
                        name: {"shape": list(a.shape), "data": a.ravel().tolist()}
                        for name, a in store.arrays().items()
                    },
                }
                for role, store in self.stores.items()
            },
        }
        Path(path).write_text(json.dumps(doc, sort_keys=True), encoding="utf-8")

    @staticmethod
    def load(path: str | Path) -> "PolicyCheckpoint":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if doc.get("format") != _CHECKPOINT_FORMAT:
            raise ShapeMismatch(f"{path}: unexpected checkpoint format")
        stores = {}
        for role, blob in doc["stores"].items():
            spec = NetworkSpec.from_json(json.dumps(blob["spec"]))
            store = init_params(spec, seed=0)
            arrays = {
                name: np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
                for name, entry in blob["arrays"].items()
            }
            store.load_arrays(arrays)
            stores[role] = store
        config = AgentConfig(**doc["config"])
        return PolicyCheckpoint(
            algo=doc["algo"], stores=stores, config=config, metadata=doc["metadata"]
        )


# -- training orchestrator -----------------------------------------------------------


@dataclass
class TrainResult:
    checkpoint: PolicyCheckpoint
    curve: list[tuple[int, float, float, float]]  # step, loss, mean_ep_reward, eps


def write_training_curve(rows, path: str | Path) -> None:
    lines = ["step,loss,mean_episode_reward,epsilon"]
    for step, loss, mean_r, eps in rows:
        lines.append(f"{step},{loss!r},{mean_r!r},{eps!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


class _EpisodePool:
    """Valid (contract, start-index) ranges inside the training window."""

    def __init__(self, contracts, train_range, episode_len: int):
        start_d, end_d = train_range
        self.entries = []
        for c in contracts:
            lo_idx = c.series.index_of_first_date_on_or_after(start_d)
            hi_idx = c.series.index_of_last_date_on_or_before(end_d)
            if lo_idx is None or hi_idx is None:
                continue
            lo = max(c.first_state_index, lo_idx)
            hi = hi_idx - episode_len
            if hi >= lo:
                self.entries.append((c, lo, hi))
        if not self.entries:
            raise InsufficientHistory(
                f"no contract has {episode_len}-step episodes inside {train_range}"
            )

    def sample(self, rng: np.random.Generator):
        c, lo, hi = self.entries[int(rng.integers(len(self.entries)))]
        return c, int(rng.integers(lo, hi + 1))


def _train_reward_config(reward_cfg: RewardConfig, cfg: AgentConfig) -> RewardConfig:
    return replace(reward_cfg, bp=cfg.bp_train)


def _resolve_train_range(split):
    if isinstance(split, WalkForwardSplit):
        return split.train_range
    return split


def train(
    algo: str,
    contracts: list[ContractFeatures],
    split,
    cfg: AgentConfig,
    reward_cfg: RewardConfig,
    seed: int,
) -> TrainResult:
    """Run one algorithm's loop over episodes sampled across ``contracts``.

    ``split`` is a WalkForwardSplit or a plain (start, end) train range.
    Deterministic under ``seed``; training costs use ``cfg.bp_train``.
    """
    if algo not in ALGOS:
        raise ShapeMismatch(f"unknown algo {algo!r}")
    train_range = _resolve_train_range(split)
    feature_count = len(FEATURE_NAMES)
    pool = _EpisodePool(contracts, train_range, cfg.episode_len)
    rng = np.random.default_rng(seed)
    reward_train = _train_reward_config(reward_cfg, cfg)

    if algo == "dqn":
        stores, curve, updates = _train_dqn(pool, cfg, reward_train, rng, feature_count)
    elif algo == "pg":
        stores, curve, updates = _train_pg(pool, cfg, reward_train, rng, feature_count)
    else:
        stores, curve, updates = _train_a2c(pool, cfg, reward_train, rng, feature_count)

    metadata = {
        "asset_class": contracts[0].series.asset_class,
        "tickers": [c.series.ticker for c in contracts],
        "seed": seed,
        "train_range": [train_range[0].isoformat(), train_range[1].isoformat()],
        "env_steps": curve[-1][0] if curve else 0,
        "updates": updates,
    }
    checkpoint = PolicyCheckpoint(algo=algo, stores=stores, config=cfg, metadata=metadata)
    return TrainResult(checkpoint=checkpoint, curve=curve)


def _train_dqn(pool, cfg, reward_cfg, rng, feature_count):
    spec = default_spec("dueling", feature_count)
    online = init_params(spec, int(rng.integers(2**31)))
    target = online.copy()
    adam = adam_init(online)
    buffer = ReplayBuffer(cfg.memory_size)
    warmup = cfg.batch_size * 4
    envs: dict[str, TradingEnv] = {}
    curve = []
    ep_rewards: deque = deque(maxlen=10)
    steps = 0
    updates = 0
    last_loss = float("nan")
    while steps < cfg.total_steps:
        contract, start = pool.sample(rng)
        env = envs.setdefault(
            contract.series.ticker, TradingEnv(contract, reward_cfg, ActionSpace("discrete3"))
        )
        state = env.reset(start, cfg.episode_len)
        ep_reward = 0.0
        eps = cfg.epsilon_at(steps)
        while not env.done and steps < cfg.total_steps:
            steps += 1
            eps = cfg.epsilon_at(steps)
            a_idx = dqn_select(online, state.matrix, eps, rng)
            prev_matrix = state.matrix
            state, reward, _ = env.step(DISCRETE_ACTIONS[a_idx])
            buffer.push((prev_matrix, a_idx, reward, state.matrix, env.done))
            ep_reward += reward
            if len(buffer) >= warmup and steps % cfg.train_every == 0:
                last_loss = dqn_train_step(
                    online, target, buffer.sample(cfg.batch_size, rng), cfg, adam
                )
                updates += 1
            target_sync(online, target, steps, cfg.target_sync_tau)
        ep_rewards.append(ep_reward)
        curve.append((steps, last_loss, float(np.mean(ep_rewards)), eps))
    return {"online": online, "target": target}, curve, updates


def _train_pg(pool, cfg, reward_cfg, rng, feature_count):
    spec = default_spec("softmax3", feature_count)
    actor = init_params(spec, int(rng.integers(2**31)))
    adam = adam_init(actor)
    envs: dict[str, TradingEnv] = {}
    curve = []
    ep_rewards: deque = deque(maxlen=10)
    steps = 0
    updates = 0
    while steps < cfg.total_steps:
        contract, start = pool.sample(rng)
        env = envs.setdefault(
            contract.series.ticker, TradingEnv(contract, reward_cfg, ActionSpace("discrete3"))
        )
        state = env.reset(start, cfg.episode_len)
        states, actions, rewards = [], [], []
        while not env.done:
            a_idx = pg_sample_action(actor, state.matrix, rng)
            states.append(state.matrix)
            actions.append(a_idx)
            state, reward, _ = env.step(DISCRETE_ACTIONS[a_idx])
            rewards.append(reward)
            steps += 1
        loss = pg_update(
            actor, (np.stack(states), np.array(actions), np.array(rewards)), cfg, adam
        )
        updates += 1
        ep_rewards.append(float(np.sum(rewards)))
        curve.append((steps, loss, float(np.mean(ep_rewards)), 0.0))
    return {"actor": actor}, curve, updates


class _A2CCursor:
    def __init__(self, env: TradingEnv, state):
        self.env = env
        self.state = state
        self.ep_reward = 0.0


def _train_a2c(pool, cfg, reward_cfg, rng, feature_count):
    if cfg.batch_size % cfg.n_envs != 0:
        raise EnvCountMismatch(
            f"batch_size {cfg.batch_size} must be a multiple of n_envs {cfg.n_envs}"
        )
    actor = init_params(default_spec("gaussian", feature_count), int(rng.integers(2**31)))
    critic = init_params(default_spec("value", feature_count), int(rng.integers(2**31)))
    adam_a = adam_init(actor)
    adam_c = adam_init(critic)

    def new_cursor() -> _A2CCursor:
        # Each cursor gets its own env; the underlying features are shared.
        contract, start = pool.sample(rng)
        env = TradingEnv(contract, reward_cfg, ActionSpace("continuous"))
        state = env.reset(start, cfg.episode_len)
        return _A2CCursor(env, state)

    cursors = [new_cursor() for _ in range(cfg.n_envs)]
    pending: list = []
    curve = []
    ep_rewards: deque = deque(maxlen=10)
    steps = 0
    updates = 0
    while steps < cfg.total_steps:
        stacked = np.stack([c.state.matrix for c in cursors])
        raw, clamped = a2c_sample_actions(actor, stacked, rng)
        for i, cursor in enumerate(cursors):
            prev_matrix = cursor.state.matrix
            next_state, reward, done = cursor.env.step(clamped[i])
            pending.append((prev_matrix, raw[i], reward, next_state.matrix, done))
            cursor.ep_reward += reward
            steps += 1
            if done:
                ep_rewards.append(cursor.ep_reward)
                cursors[i] = new_cursor()
            else:
                cursor.state = next_state
        if len(pending) >= cfg.batch_size:
            batch, pending = pending[: cfg.batch_size], pending[cfg.batch_size :]
            actor_loss, critic_loss = a2c_update(actor, critic, batch, cfg, adam_a, adam_c)
            updates += 1
            mean_r = float(np.mean(ep_rewards)) if ep_rewards else 0.0
            curve.append((steps, critic_loss, mean_r, 0.0))
    return {"actor": actor, "critic": critic}, curve, updates


# -- greedy evaluation ----------------------------------------------------------------

_EVAL_CHUNK = 256


def greedy_positions(
    checkpoint: PolicyCheckpoint, contract: ContractFeatures, t0: int, t1: int
) -> np.ndarray:
    """Deterministic positions for price indices t0..t1 inclusive."""
    first = contract.first_state_index
    if t0 < first or t1 >= len(contract):
        raise InsufficientHistory(f"indices [{t0}, {t1}] outside state range")
    windows = contract.states.windows[t0 - first : t1 + 1 - first]
    out = np.empty(windows.shape[0])
    if checkpoint.algo == "dqn":
        store = checkpoint.stores["online"]
    elif checkpoint.algo == "pg":
        store = checkpoint.stores["actor"]
    else:
        store = checkpoint.stores["actor"]
    for lo in range(0, windows.shape[0], _EVAL_CHUNK):
        chunk = windows[lo : lo + _EVAL_CHUNK]
        res = forward(store, chunk)
        if checkpoint.algo == "dqn":
            idx = np.argmax(res["q"].value, axis=1)
            out[lo : lo + chunk.shape[0]] = np.asarray(DISCRETE_ACTIONS)[idx]
        elif checkpoint.algo == "pg":
            idx = np.argmax(res["logits"].value, axis=1)
            out[lo : lo + chunk.shape[0]] = np.asarray(DISCRETE_ACTIONS)[idx]
        else:
            out[lo : lo + chunk.shape[0]] = np.clip(res["mean"].value[:, 0], -1.0, 1.0)
    return out
