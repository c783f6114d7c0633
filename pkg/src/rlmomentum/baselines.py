"""Classical strategies: long-only, yearly sign momentum, and the MACD signal.

All positions are pure functions of the price history up to the day they are
taken; nothing here looks ahead.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import InsufficientHistory
from .indicators import MACD_NORM_WINDOW, MACD_PRICE_STD_WINDOW, MACD_SCALE_PAIRS, macd_raw

SIGN_LOOKBACK = 252
PHI_NORMALIZER = 0.89


@dataclass(frozen=True)
class BaselineSpec:
    kind: Literal["long", "signr", "macd"]
    macd_scales: tuple[tuple[int, int], ...] = MACD_SCALE_PAIRS
    combine: Literal["avg", "sum"] = "avg"


def long_only(t: int) -> float:
    """Fully long, always."""
    return 1.0


def sign_momentum(prices: np.ndarray, t: int) -> float:
    """sign(p_t - p_{t-252}); an exact tie maps to flat."""
    if t < SIGN_LOOKBACK:
        raise InsufficientHistory(f"need index >= {SIGN_LOOKBACK}, got {t}")
    return float(np.sign(prices[t] - prices[t - SIGN_LOOKBACK]))


def phi(x):
    """Position response x * exp(-x^2/4) / 0.89; odd, peaks near +/- sqrt(2)."""
    x = np.asarray(x, dtype=np.float64)
    return x * np.exp(-(x * x) / 4.0) / PHI_NORMALIZER


def combined_macd_series(prices: np.ndarray, spec: BaselineSpec) -> np.ndarray:
    """The multi-scale MACD indicator before the phi response."""
    stacked = np.stack([macd_raw(prices, s, l) for s, l in spec.macd_scales])
    if spec.combine == "avg":
        return stacked.mean(axis=0)
    return stacked.sum(axis=0)


def macd_signal(prices: np.ndarray, t: int, spec: BaselineSpec | None = None) -> float:
    """phi of the combined multi-scale MACD at index t."""
    spec = spec or BaselineSpec(kind="macd")
    first_valid = MACD_PRICE_STD_WINDOW + MACD_NORM_WINDOW
    if t < first_valid:
        raise InsufficientHistory(f"need index >= {first_valid}, got {t}")
    return float(phi(combined_macd_series(prices, spec)[t]))


def baseline_positions(
    spec: BaselineSpec, prices: np.ndarray, t0: int, t1: int
) -> np.ndarray:
    """Positions for indices t0..t1 inclusive, computed in one pass."""
    if t1 < t0:
        raise InsufficientHistory("empty index range")
    if spec.kind == "long":
        return np.ones(t1 - t0 + 1)
    if spec.kind == "signr":
        if t0 < SIGN_LOOKBACK:
            raise InsufficientHistory(f"need start index >= {SIGN_LOOKBACK}")
        return np.sign(prices[t0 : t1 + 1] - prices[t0 - SIGN_LOOKBACK : t1 + 1 - SIGN_LOOKBACK])
    first_valid = MACD_PRICE_STD_WINDOW + MACD_NORM_WINDOW
    if t0 < first_valid:
        raise InsufficientHistory(f"need start index >= {first_valid}")
    return phi(combined_macd_series(prices, spec)[t0 : t1 + 1])
