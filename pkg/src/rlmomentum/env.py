"""Single-contract trading environment.

The state is the trailing 60-row feature window; the action is a target
position (discrete {-1, 0, +1} or any value in [-1, 1]).  Stepping from index
t earns the next day's volatility-scaled trade return net of transaction
costs:

    R = mu * [ a * (s_tgt / s_t) * r_{t+1}
               - bp * base * | a * s_tgt/s_t  -  a_prev * s_tgt/s_{t-1} | ]

where s_* are ex-ante daily vol estimates (floored), s_tgt is the annualized
target converted to daily, and r is the percentage return by default.  Under
the percentage convention the cost is already a fraction of traded value
(base = 1); the additive convention keeps raw price differences and the
p_t price factor (base = p_t) and uses the vol of price differences.

Positions reset to flat at episode start, so the first step pays the
inception trade.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import BadSpec, EpisodeDone, OutOfRange
from .indicators import ContractFeatures, StateWindow
from .market_data import TRADING_DAYS_PER_YEAR

DISCRETE_ACTIONS = (-1.0, 0.0, 1.0)

Convention = Literal["pct", "additive"]


@dataclass(frozen=True)
class ActionSpace:
    mode: Literal["discrete3", "continuous"] = "discrete3"

    def validate(self, action: float) -> float:
        if self.mode == "discrete3":
            if action not in DISCRETE_ACTIONS:
                raise BadSpec(f"discrete action must be in {DISCRETE_ACTIONS}, got {action}")
            return float(action)
        return float(np.clip(action, -1.0, 1.0))


@dataclass(frozen=True)
class RewardConfig:
    mu: float = 1.0
    sigma_tgt: float = 0.15  # annualized volatility target
    bp: float = 0.0020  # cost rate, fraction of traded value
    vol_floor: float = 1e-4  # minimum daily vol in the scaling denominator
    convention: Convention = "pct"

    def __post_init__(self):
        if self.mu <= 0:
            raise BadSpec("mu must be > 0")
        if self.sigma_tgt <= 0:
            raise BadSpec("sigma_tgt must be > 0")
        if self.bp < 0:
            raise BadSpec("bp must be >= 0")
        if self.vol_floor <= 0:
            raise BadSpec("vol_floor must be > 0")

    @property
    def sigma_tgt_daily(self) -> float:
        return self.sigma_tgt / np.sqrt(TRADING_DAYS_PER_YEAR)


def scaled_position(action: float, sigma_daily: float, cfg: RewardConfig) -> float:
    """Position multiplier A * (sigma_tgt_daily / sigma_daily)."""
    return action * (cfg.sigma_tgt_daily / sigma_daily)


def step_reward(
    action: float,
    action_prev: float,
    ratio_now: float,
    ratio_prev: float,
    raw_return: float,
    price_prev: float,
    cfg: RewardConfig,
) -> tuple[float, float]:
    """Reward and its cost component for one step.

    ``ratio_now`` scales the incoming position, ``ratio_prev`` the one being
    replaced; ``raw_return`` is pct or price-difference per the convention.
    """
    turnover = abs(action * ratio_now - action_prev * ratio_prev)
    cost_base = price_prev if cfg.convention == "additive" else 1.0
    cost = cfg.bp * cost_base * turnover
    profit = action * ratio_now * raw_return
    return cfg.mu * (profit - cost), cfg.mu * cost


class TradingEnv:
    """Episode cursor over one contract's precomputed features."""

    def __init__(
        self,
        contract: ContractFeatures,
        cfg: RewardConfig,
        action_space: ActionSpace | None = None,
    ):
        self.contract = contract
        self.cfg = cfg
        self.action_space = action_space or ActionSpace()
        self._t = -1
        self._end = -1
        self._a_prev = 0.0
        self._a_prev2 = 0.0
        self.done = True

    def _sigma(self, index: int) -> float:
        if self.cfg.convention == "additive":
            raw = self.contract.vol_diff[index]
        else:
            raw = self.contract.vol.daily_ewm_std[index]
        return max(raw, self.cfg.vol_floor)

    def ratio(self, index: int) -> float:
        """sigma_tgt_daily over the floored ex-ante vol at ``index``."""
        return self.cfg.sigma_tgt_daily / self._sigma(index)

    def reset(self, start_index: int, episode_len: int) -> StateWindow:
        first = self.contract.first_state_index
        last = len(self.contract) - 1
        if episode_len < 1:
            raise OutOfRange("episode_len must be >= 1")
        if start_index < first:
            raise OutOfRange(f"start_index {start_index} before first state {first}")
        if start_index + episode_len > last:
            raise OutOfRange(
                f"episode [{start_index}, {start_index + episode_len}] exceeds data end {last}"
            )
        self._t = start_index
        self._end = start_index + episode_len
        self._a_prev = 0.0
        self._a_prev2 = 0.0
        self.done = False
        return self.contract.states.window_at(start_index)

    @property
    def cursor(self) -> int:
        return self._t

    @property
    def prev_action(self) -> float:
        return self._a_prev

    def step(self, action: float) -> tuple[StateWindow, float, bool]:
        if self.done:
            raise EpisodeDone("episode already finished")
        action = self.action_space.validate(action)
        t = self._t
        closes = self.contract.series.closes
        if self.cfg.convention == "additive":
            raw_return = closes[t + 1] - closes[t]
        else:
            raw_return = closes[t + 1] / closes[t] - 1.0
        reward, _ = step_reward(
            action=action,
            action_prev=self._a_prev,
            ratio_now=self.ratio(t),
            ratio_prev=self.ratio(t - 1),
            raw_return=raw_return,
            price_prev=closes[t],
            cfg=self.cfg,
        )
        self._a_prev2 = self._a_prev
        self._a_prev = action
        self._t = t + 1
        self.done = self._t >= self._end
        return self.contract.states.window_at(self._t), reward, self.done
