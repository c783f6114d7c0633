"""Momentum and technical state features.

All rolling windows cover the W observations strictly *before* index t
(``x[t-W:t]`` in slice notation), so a value at index t never peeks at the
close it describes beyond p_t itself.  Rolling standard deviations use the
population (1/n) form.  Any zero denominator yields a 0 feature rather than a
non-finite value: a zero is read as "no signal".

Feature columns, in order: normalized close (252-day z-score), volatility-
normalized returns over 21/42/63/252 days, combined MACD, and 30-day RSI.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import date
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import BadSpan, InsufficientHistory, NonFiniteInput
from .market_data import PriceSeries

FEATURE_NAMES = ("norm_close", "ret_1m", "ret_2m", "ret_3m", "ret_1y", "macd", "rsi")
RETURN_HORIZONS = {"ret_1m": 21, "ret_2m": 42, "ret_3m": 63, "ret_1y": 252}
STATE_LENGTH = 60
VOL_SPAN = 60
MACD_PRICE_STD_WINDOW = 63
MACD_NORM_WINDOW = 252
ZSCORE_WINDOW = 252
RSI_WINDOW = 30
MACD_SCALE_PAIRS = ((8, 24), (16, 48), (32, 96))


def ewm_std(x: np.ndarray, span: int) -> np.ndarray:
    """Exponentially weighted moving standard deviation, span convention.

    Weight (1-alpha)^k at lag k with alpha = 2/(span+1), renormalized over the
    available history; out[0] = 0.  Uses a weighted West recursion so long
    series stay numerically stable.
    """
    if span < 2:
        raise BadSpan(f"span must be >= 2, got {span}")
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("ewm_std input must be finite")
    lam = 1.0 - 2.0 / (span + 1.0)
    out = np.empty_like(x)
    w_sum = 0.0
    mean = 0.0
    m2 = 0.0
    for t in range(x.shape[0]):
        w_sum *= lam
        m2 *= lam
        w_sum += 1.0
        delta = x[t] - mean
        mean += delta / w_sum
        m2 += delta * (x[t] - mean)
        out[t] = np.sqrt(m2 / w_sum) if m2 > 0.0 else 0.0
    return out


def ewm_mean(x: np.ndarray, alpha: float) -> np.ndarray:
    """EWM average with weight (1-alpha)^k at lag k, renormalized from start."""
    x = np.asarray(x, dtype=np.float64)
    lam = 1.0 - alpha
    out = np.empty_like(x)
    num = 0.0
    den = 0.0
    for t in range(x.shape[0]):
        num = lam * num + x[t]
        den = lam * den + 1.0
        out[t] = num / den
    return out


def _trailing_windows(x: np.ndarray, window: int) -> np.ndarray:
    """Rows of the W observations strictly before each index >= window."""
    return sliding_window_view(x, window)[:-1]


def rolling_mean_excl(x: np.ndarray, window: int) -> np.ndarray:
    """mean(x[t-window:t]); NaN while the window is not yet full."""
    out = np.full(x.shape[0], np.nan)
    if x.shape[0] > window:
        out[window:] = _trailing_windows(x, window).mean(axis=1)
    return out


def rolling_std_excl(x: np.ndarray, window: int) -> np.ndarray:
    """Population std of x[t-window:t]; NaN while the window is not yet full."""
    out = np.full(x.shape[0], np.nan)
    if x.shape[0] > window:
        out[window:] = _trailing_windows(x, window).std(axis=1)
    return out


def pct_returns(prices: np.ndarray) -> np.ndarray:
    """r[t] = p[t]/p[t-1] - 1 with r[0] = NaN."""
    r = np.full(prices.shape[0], np.nan)
    r[1:] = prices[1:] / prices[:-1] - 1.0
    return r


@dataclass(frozen=True)
class VolEstimate:
    """Ex-ante daily volatility: EWM std (60-day span) of percentage returns."""

    daily_ewm_std: np.ndarray
    span_days: int = VOL_SPAN


def vol_estimate(prices: np.ndarray, span: int = VOL_SPAN) -> VolEstimate:
    sigma = np.zeros(prices.shape[0])
    if prices.shape[0] > 1:
        r = prices[1:] / prices[:-1] - 1.0
        sigma[1:] = ewm_std(r, span)
    return VolEstimate(daily_ewm_std=sigma, span_days=span)


def vol_normalized_return(
    prices: np.ndarray, horizon_days: int, vol: VolEstimate
) -> np.ndarray:
    """(p_t/p_{t-h} - 1) / (sigma_t * sqrt(h)); 0 where sigma_t == 0."""
    n = prices.shape[0]
    if n <= horizon_days:
        raise InsufficientHistory(
            f"need > {horizon_days} observations, got {n}"
        )
    out = np.full(n, np.nan)
    raw = prices[horizon_days:] / prices[:-horizon_days] - 1.0
    sigma = vol.daily_ewm_std[horizon_days:]
    scaled = np.zeros_like(raw)
    nz = sigma > 0.0
    scaled[nz] = raw[nz] / (sigma[nz] * np.sqrt(horizon_days))
    out[horizon_days:] = scaled
    return out


def macd_raw(prices: np.ndarray, short_scale: int, long_scale: int) -> np.ndarray:
    """Normalized MACD: EWM-average crossover over a 63-day price std, then
    z-scaled by the 252-day std of that ratio.  Zero denominators map to 0.
    """
    if short_scale >= long_scale:
        raise BadSpan(f"short scale {short_scale} must be < long scale {long_scale}")
    n = prices.shape[0]
    first_valid = MACD_PRICE_STD_WINDOW + MACD_NORM_WINDOW
    if n <= first_valid:
        raise InsufficientHistory(f"need > {first_valid} observations, got {n}")
    m_short = ewm_mean(prices, 1.0 / short_scale)
    m_long = ewm_mean(prices, 1.0 / long_scale)
    sd_price = rolling_std_excl(prices, MACD_PRICE_STD_WINDOW)[MACD_PRICE_STD_WINDOW:]
    num = (m_short - m_long)[MACD_PRICE_STD_WINDOW:]
    q = np.divide(num, sd_price, out=np.zeros_like(num), where=sd_price > 0.0)

    sd_q = rolling_std_excl(q, MACD_NORM_WINDOW)
    res = np.divide(q, sd_q, out=np.zeros_like(q), where=sd_q > 0.0)
    res[np.isnan(sd_q)] = np.nan
    out = np.full(n, np.nan)
    out[MACD_PRICE_STD_WINDOW:] = res
    return out


def rsi(prices: np.ndarray, window: int = RSI_WINDOW) -> np.ndarray:
    """Wilder RSI in [0, 100]; all-gain -> 100, all-loss -> 0, no-change -> 50."""
    n = prices.shape[0]
    if n <= window:
        raise InsufficientHistory(f"need > {window} observations, got {n}")
    deltas = np.diff(prices)
    gains = np.maximum(deltas, 0.0)
    losses = np.maximum(-deltas, 0.0)
    out = np.full(n, np.nan)
    avg_gain = gains[:window].mean()
    avg_loss = losses[:window].mean()

    def level(g: float, l: float) -> float:
        if g == 0.0 and l == 0.0:
            return 50.0
        if l == 0.0:
            return 100.0
        return 100.0 - 100.0 / (1.0 + g / l)

    out[window] = level(avg_gain, avg_loss)
    w = float(window)
    for t in range(window + 1, n):
        avg_gain = (avg_gain * (w - 1.0) + gains[t - 1]) / w
        avg_loss = (avg_loss * (w - 1.0) + losses[t - 1]) / w
        out[t] = level(avg_gain, avg_loss)
    return out


def normalized_close(prices: np.ndarray, window: int = ZSCORE_WINDOW) -> np.ndarray:
    """Rolling z-score of the close against the trailing window; 0 on zero std."""
    n = prices.shape[0]
    if n <= window:
        raise InsufficientHistory(f"need > {window} observations, got {n}")
    mean = rolling_mean_excl(prices, window)[window:]
    std = rolling_std_excl(prices, window)[window:]
    diff = prices[window:] - mean
    out = np.full(n, np.nan)
    out[window:] = np.divide(diff, std, out=np.zeros_like(diff), where=std > 0.0)
    return out


@dataclass(frozen=True)
class FeatureMatrix:
    """Per-day feature vectors for one contract, NaN before ``first_valid_index``."""

    dates: tuple[date, ...]
    values: np.ndarray  # (n_days, len(FEATURE_NAMES))
    first_valid_index: int

    def __post_init__(self):
        n, f = self.values.shape
        if n != len(self.dates):
            raise InsufficientHistory("feature rows must match dates")
        if f != len(FEATURE_NAMES):
            raise InsufficientHistory(f"expected {len(FEATURE_NAMES)} feature columns")
        if not np.all(np.isfinite(self.values[self.first_valid_index :])):
            raise NonFiniteInput("non-finite feature past first_valid_index")
        self.values.setflags(write=False)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, FEATURE_NAMES.index(name)]


def compute_features(series: PriceSeries) -> FeatureMatrix:
    """Assemble the full feature matrix for one price series."""
    p = series.closes
    n = p.shape[0]
    min_len = MACD_PRICE_STD_WINDOW + MACD_NORM_WINDOW + 1
    if n < min_len:
        raise InsufficientHistory(
            f"{series.ticker}: need >= {min_len} closes for features, got {n}"
        )
    vol = vol_estimate(p)
    cols = {
        "norm_close": normalized_close(p),
        "rsi": rsi(p),
        "macd": np.mean(
            [macd_raw(p, s, l) for s, l in MACD_SCALE_PAIRS], axis=0
        ),
    }
    for name, h in RETURN_HORIZONS.items():
        cols[name] = vol_normalized_return(p, h, vol)
    values = np.column_stack([cols[name] for name in FEATURE_NAMES])
    first_valid = 0
    for j in range(values.shape[1]):
        finite = np.isfinite(values[:, j])
        if not finite.any():
            raise InsufficientHistory(f"{series.ticker}: column {FEATURE_NAMES[j]} all-NaN")
        first_valid = max(first_valid, int(np.argmax(finite)))
    return FeatureMatrix(dates=series.dates, values=values, first_valid_index=first_valid)


@dataclass(frozen=True)
class StateWindow:
    """Trailing STATE_LENGTH rows of features as of one date."""

    matrix: np.ndarray  # (STATE_LENGTH, n_features)
    as_of_date: date

    def __post_init__(self):
        if self.matrix.shape[0] != STATE_LENGTH:
            raise InsufficientHistory(f"state must have {STATE_LENGTH} rows")
        if not np.all(np.isfinite(self.matrix)):
            raise NonFiniteInput("state window contains non-finite values")


@dataclass(frozen=True)
class StateSet:
    """All state windows of a contract, stacked; states[j] is as of dates[j]."""

    windows: np.ndarray  # (n_states, STATE_LENGTH, n_features)
    dates: tuple[date, ...]
    first_index: int  # price index of the first state

    def window_at(self, price_index: int) -> StateWindow:
        j = price_index - self.first_index
        if j < 0 or j >= self.windows.shape[0]:
            raise InsufficientHistory(f"no state at price index {price_index}")
        return StateWindow(matrix=self.windows[j], as_of_date=self.dates[j])

    def matrix_at(self, price_index: int) -> np.ndarray:
        return self.windows[price_index - self.first_index]


def build_states(fm: FeatureMatrix) -> StateSet:
    """One window per index t >= first_valid_index + STATE_LENGTH - 1."""
    first_state = fm.first_valid_index + STATE_LENGTH - 1
    n = fm.values.shape[0]
    if first_state >= n:
        raise InsufficientHistory(
            f"need > {first_state} rows for one state, got {n}"
        )
    stacked = sliding_window_view(fm.values, (STATE_LENGTH, fm.values.shape[1]))
    windows = stacked[fm.first_valid_index :, 0]  # (n_states, 60, F) view
    windows = np.ascontiguousarray(windows)
    windows.setflags(write=False)
    return StateSet(
        windows=windows,
        dates=fm.dates[first_state:],
        first_index=first_state,
    )


@dataclass(frozen=True)
class ContractFeatures:
    """Everything the environment and backtester need for one contract."""

    series: PriceSeries
    features: FeatureMatrix
    vol: VolEstimate
    vol_diff: np.ndarray  # EWM std of price differences (additive convention)
    states: StateSet

    @property
    def first_state_index(self) -> int:
        return self.states.first_index

    def __len__(self) -> int:
        return len(self.series)


def prepare_contract(series: PriceSeries) -> ContractFeatures:
    fm = compute_features(series)
    vol = vol_estimate(series.closes)
    diffs = np.diff(series.closes)
    vol_diff = np.zeros(series.closes.shape[0])
    vol_diff[1:] = ewm_std(diffs, VOL_SPAN)
    return ContractFeatures(
        series=series,
        features=fm,
        vol=vol,
        vol_diff=vol_diff,
        states=build_states(fm),
    )


def write_features_csv(fm: FeatureMatrix, path: str | Path) -> None:
    """Dump rows from first_valid_index onward (all values finite)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", *FEATURE_NAMES])
        for i in range(fm.first_valid_index, fm.values.shape[0]):
            writer.writerow(
                [fm.dates[i].isoformat(), *[repr(float(v)) for v in fm.values[i]]]
            )
