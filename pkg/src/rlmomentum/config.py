"""Run configuration: a flat dotted-key text file, overridable by CLI flags.

Example file::

    seed = 7
    data.first_test_year = 2015
    reward.sigma_tgt = 0.15
    agents.dqn.total_steps = 1200
    strategies = long,signr,macd,dqn,pg,a2c

Flags win over the file; everything has a default.  The manifest hash covers
the fully resolved key set, so equal manifests mean equal inputs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .agents import ALGOS, AgentConfig
from .env import RewardConfig
from .errors import BadSpec

STRATEGY_ORDER = ("long", "signr", "macd", "dqn", "pg", "a2c")
STRATEGY_LABELS = {
    "long": "Long",
    "signr": "Sign(R)",
    "macd": "MACD",
    "dqn": "DQN",
    "pg": "PG",
    "a2c": "A2C",
}

_DEFAULTS: dict[str, str] = {
    "seed": "7",
    "data.first_test_year": "2015",
    "data.retrain_interval_years": "5",
    "reward.mu": "1.0",
    "reward.sigma_tgt": "0.15",
    "reward.bp": "0.002",
    "reward.vol_floor": "0.0001",
    "reward.convention": "pct",
    "eval.calendar": "intersection",
    "eval.overlay": "true",
    "eval.sweep_bps": "0,1,5,10,15,20,25",
    "strategies": "long,signr,macd,dqn,pg,a2c",
    # Demo-scale training budgets; the library defaults stay at 100k steps.
    "agents.dqn.total_steps": "1000",
    "agents.dqn.train_every": "2",
    "agents.pg.total_steps": "1500",
    "agents.a2c.total_steps": "3000",
}

_AGENT_FIELD_TYPES = {
    "gamma": float,
    "lr_actor": float,
    "lr_critic": float,
    "batch_size": int,
    "bp_train": float,
    "memory_size": int,
    "target_sync_tau": int,
    "eps_start": float,
    "eps_end": float,
    "eps_decay_steps": int,
    "n_envs": int,
    "entropy_coef": float,
    "grad_clip": float,
    "total_steps": int,
    "episode_len": int,
    "train_every": int,
}


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise BadSpec(f"config line {lineno}: expected 'key = value'")
        key, value = stripped.split("=", 1)
        out[key.strip()] = value.strip()
    return out


@dataclass
class RunConfig:
    """Resolved key/value table plus typed accessors."""

    values: dict[str, str] = field(default_factory=dict)

    @staticmethod
    def load(path: str | Path | None = None, overrides: dict[str, str] | None = None) -> "RunConfig":
        values = dict(_DEFAULTS)
        if path is not None:
            values.update(parse_config_text(Path(path).read_text(encoding="utf-8")))
        if overrides:
            values.update(overrides)
        return RunConfig(values=values)

    # -- typed accessors -------------------------------------------------------

    def _get(self, key: str) -> str:
        if key not in self.values:
            raise BadSpec(f"missing config key {key!r}")
        return self.values[key]

    def int_of(self, key: str) -> int:
        try:
            return int(self._get(key))
        except ValueError as exc:
            raise BadSpec(f"config {key} must be an integer") from exc

    def float_of(self, key: str) -> float:
        try:
            return float(self._get(key))
        except ValueError as exc:
            raise BadSpec(f"config {key} must be a number") from exc

    def bool_of(self, key: str) -> bool:
        raw = self._get(key).lower()
        if raw in ("true", "1", "yes"):
            return True
        if raw in ("false", "0", "no"):
            return False
        raise BadSpec(f"config {key} must be true/false")

    def list_of(self, key: str) -> list[str]:
        return [x.strip() for x in self._get(key).split(",") if x.strip()]

    @property
    def seed(self) -> int:
        return self.int_of("seed")

    def reward_config(self) -> RewardConfig:
        convention = self._get("reward.convention")
        if convention not in ("pct", "additive"):
            raise BadSpec("reward.convention must be pct or additive")
        return RewardConfig(
            mu=self.float_of("reward.mu"),
            sigma_tgt=self.float_of("reward.sigma_tgt"),
            bp=self.float_of("reward.bp"),
            vol_floor=self.float_of("reward.vol_floor"),
            convention=convention,
        )

    def agent_config(self, algo: str) -> AgentConfig:
        if algo not in ALGOS:
            raise BadSpec(f"unknown algo {algo!r}")
        overrides = {}
        prefix = f"agents.{algo}."
        for key, raw in self.values.items():
            if not key.startswith(prefix):
                continue
            name = key[len(prefix):]
            caster = _AGENT_FIELD_TYPES.get(name)
            if caster is None:
                raise BadSpec(f"unknown agent config field {key!r}")
            overrides[name] = caster(raw)
        return AgentConfig.for_algo(algo, **overrides)

    def strategies(self) -> list[str]:
        chosen = self.list_of("strategies")
        bad = [s for s in chosen if s not in STRATEGY_ORDER]
        if bad:
            raise BadSpec(f"unknown strategies {bad}")
        return [s for s in STRATEGY_ORDER if s in chosen]

    def sweep_rates_bp(self) -> list[float]:
        return [float(x) for x in self.list_of("eval.sweep_bps")]

    # -- manifests ----------------------------------------------------------------

    def canonical_text(self) -> str:
        return "\n".join(f"{k} = {self.values[k]}" for k in sorted(self.values)) + "\n"

    def hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode("utf-8")).hexdigest()

    def manifest(self, command: str, version: str) -> str:
        doc = {
            "command": command,
            "version": version,
            "seed": self.seed,
            "config_hash": self.hash(),
            "config": dict(sorted(self.values.items())),
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"
