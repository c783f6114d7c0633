"""Backtesting, portfolio aggregation, volatility-target overlay and metrics.

``backtest_contract`` turns a frozen policy into a daily trade-return series
through the same reward kernel the environment uses.  Per-contract series are
averaged into equally weighted portfolios, optionally rescaled by an ex-ante
portfolio-level volatility target, and summarized into the nine-metric
report: annualized return and risk, downside deviation, Sharpe, Sortino,
maximum drawdown, Calmar, the positive-return share, and the average
profit-to-loss ratio.

Degenerate statistics (zero variance, no losses, zero turnover) come back as
``None`` plus a flag, never as infinities.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from datetime import date
from pathlib import Path
from typing import Callable, Literal, Sequence

import numpy as np

from .env import RewardConfig, step_reward
from .errors import DegenerateSeries, EmptyPortfolio, InsufficientHistory
from .indicators import ContractFeatures, VOL_SPAN, ewm_std
from .market_data import TRADING_DAYS_PER_YEAR

DEFAULT_SWEEP_BPS = (0.0, 1.0, 5.0, 10.0, 15.0, 20.0, 25.0)  # basis points

# A policy maps (contract, t0, t1) to target positions for those indices.
PolicyFn = Callable[[ContractFeatures, int, int], np.ndarray]


@dataclass(frozen=True)
class TradeReturnSeries:
    """Daily trade returns for one contract under one strategy."""

    ticker: str
    strategy: str
    dates: tuple[date, ...]
    returns: np.ndarray
    actions: np.ndarray | None = None  # target position decided the day before
    costs: np.ndarray | None = None
    costs_currency: np.ndarray | None = None  # per-day cost in price units
    scaled_positions: np.ndarray | None = None  # position actually held each day

    def __post_init__(self):
        if len(self.dates) != self.returns.shape[0]:
            raise DegenerateSeries("dates and returns misaligned")
        if not np.all(np.isfinite(self.returns)):
            raise DegenerateSeries("non-finite trade returns")


@dataclass(frozen=True)
class PortfolioSeries:
    dates: tuple[date, ...]
    returns: np.ndarray
    members: tuple[str, ...]
    strategy: str
    vol_overlay_applied: bool = False


def backtest_contract(
    policy: PolicyFn,
    contract: ContractFeatures,
    cfg: RewardConfig,
    eval_bp: float | None = None,
    index_range: tuple[int, int] | None = None,
    strategy: str = "policy",
) -> TradeReturnSeries:
    """Run one frozen policy over [t0, t1], flat at inception.

    Returns accrue on the day after each decision, so the output dates are
    (t0, t1].  No parameter ever updates here: the policy is queried once for
    the whole range.
    """
    if eval_bp is not None:
        cfg = replace(cfg, bp=eval_bp)
    n = len(contract)
    first = contract.first_state_index
    if index_range is None:
        t0, t1 = first, n - 1
    else:
        t0, t1 = index_range
    if t0 < first or t1 > n - 1 or t1 <= t0:
        raise InsufficientHistory(
            f"range [{t0}, {t1}] invalid; states start at {first}, data ends {n - 1}"
        )
    actions = np.asarray(policy(contract, t0, t1 - 1), dtype=np.float64)
    if actions.shape[0] != t1 - t0:
        raise InsufficientHistory("policy returned wrong number of positions")

    closes = contract.series.closes
    sigma = (
        contract.vol_diff if cfg.convention == "additive" else contract.vol.daily_ewm_std
    )
    sigma = np.maximum(sigma, cfg.vol_floor)
    ratios = cfg.sigma_tgt_daily / sigma

    returns = np.empty(t1 - t0)
    cost_arr = np.empty(t1 - t0)
    cost_currency = np.empty(t1 - t0)
    scaled = np.empty(t1 - t0)
    a_prev = 0.0
    for k, t in enumerate(range(t0, t1)):
        if cfg.convention == "additive":
            raw = closes[t + 1] - closes[t]
        else:
            raw = closes[t + 1] / closes[t] - 1.0
        reward, cost = step_reward(
            action=actions[k],
            action_prev=a_prev,
            ratio_now=ratios[t],
            ratio_prev=ratios[t - 1],
            raw_return=raw,
            price_prev=closes[t],
            cfg=cfg,
        )
        returns[k] = reward
        cost_arr[k] = cost
        cost_currency[k] = cost * closes[t] if cfg.convention == "pct" else cost
        scaled[k] = actions[k] * ratios[t]
        a_prev = actions[k]
    return TradeReturnSeries(
        ticker=contract.series.ticker,
        strategy=strategy,
        dates=contract.series.dates[t0 + 1 : t1 + 1],
        returns=returns,
        actions=actions,
        costs=cost_arr,
        costs_currency=cost_currency,
        scaled_positions=scaled,
    )


def write_trace_csv(series: TradeReturnSeries, path: str | Path) -> None:
    """Per-step trace: date,action,scaled_position,reward,cost."""
    lines = ["date,action,scaled_position,reward,cost"]
    for d, a, sp, r, c in zip(
        series.dates, series.actions, series.scaled_positions, series.returns, series.costs
    ):
        lines.append(
            f"{d.isoformat()},{float(a)!r},{float(sp)!r},{float(r)!r},{float(c)!r}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def portfolio_returns(
    members: Sequence[TradeReturnSeries],
    calendar: Literal["intersection", "union"] = "intersection",
) -> PortfolioSeries:
    """Equal-weight mean of member returns per date."""
    if not members:
        raise EmptyPortfolio("portfolio needs at least one member")
    strategy = members[0].strategy
    date_maps = [dict(zip(m.dates, m.returns)) for m in members]
    if calendar == "intersection":
        common = set(members[0].dates)
        for m in members[1:]:
            common &= set(m.dates)
        dates = tuple(sorted(common))
        values = np.array(
            [np.mean([dm[d] for dm in date_maps]) for d in dates], dtype=np.float64
        )
    else:
        all_dates = set()
        for m in members:
            all_dates |= set(m.dates)
        dates = tuple(sorted(all_dates))
        values = np.array(
            [np.mean([dm.get(d, 0.0) for dm in date_maps]) for d in dates],
            dtype=np.float64,
        )
    if not dates:
        raise EmptyPortfolio("no common dates across members")
    return PortfolioSeries(
        dates=dates,
        returns=values,
        members=tuple(m.ticker for m in members),
        strategy=strategy,
    )


def vol_target_overlay(
    port: PortfolioSeries,
    sigma_tgt: float,
    vol_floor: float = 1e-4,
    span: int = VOL_SPAN,
) -> PortfolioSeries:
    """Rescale each day by sigma_tgt_daily over the trailing EWM vol.

    Strictly ex-ante: day t uses the estimate through t-1 only.  The first
    ``span`` observations are burn-in and dropped from the output.
    """
    n = port.returns.shape[0]
    if n <= span:
        raise InsufficientHistory(f"need > {span} observations, got {n}")
    sigma_tgt_daily = sigma_tgt / np.sqrt(TRADING_DAYS_PER_YEAR)
    est = ewm_std(port.returns, span)
    multiplier = sigma_tgt_daily / np.maximum(est[span - 1 : -1], vol_floor)
    out = port.returns[span:] * multiplier
    return PortfolioSeries(
        dates=port.dates[span:],
        returns=out,
        members=port.members,
        strategy=port.strategy,
        vol_overlay_applied=True,
    )


# -- metrics ------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricsReport:
    """The nine-metric summary; None fields carry a reason in ``flags``."""

    ann_return: float
    ann_std: float | None
    downside_dev: float | None
    sharpe: float | None
    sortino: float | None
    mdd: float
    calmar: float | None
    pct_positive: float
    avg_profit_over_avg_loss: float | None
    flags: tuple[str, ...] = field(default=())

    METRIC_ORDER = (
        "ann_return",
        "ann_std",
        "downside_dev",
        "sharpe",
        "sortino",
        "mdd",
        "calmar",
        "pct_positive",
        "avg_profit_over_avg_loss",
    )

    def as_row(self) -> list:
        return [getattr(self, name) for name in self.METRIC_ORDER]


def equity_curve(returns: np.ndarray) -> np.ndarray:
    """Compounded wealth path starting from 1.0 (the start point included)."""
    return np.concatenate(([1.0], np.cumprod(1.0 + returns)))


def max_drawdown(returns: np.ndarray) -> float:
    """Largest peak-to-trough fraction lost on the compounded curve."""
    curve = equity_curve(returns)
    peaks = np.maximum.accumulate(curve)
    return float(np.max((peaks - curve) / peaks))


def compute_metrics(
    returns: np.ndarray, periods_per_year: int = TRADING_DAYS_PER_YEAR
) -> MetricsReport:
    returns = np.asarray(returns, dtype=np.float64)
    if returns.shape[0] < 2:
        raise DegenerateSeries(f"need >= 2 observations, got {returns.shape[0]}")
    flags: list[str] = []
    ann_return = float(returns.mean() * periods_per_year)
    std_daily = float(returns.std())
    root = np.sqrt(periods_per_year)

    if std_daily > 0.0:
        ann_std = std_daily * root
        sharpe = ann_return / ann_std
    else:
        ann_std = None
        sharpe = None
        flags.append("zero_variance")

    negatives = returns[returns < 0.0]
    if negatives.size > 0 and negatives.std() > 0.0:
        downside_dev = float(negatives.std() * root)
        sortino = ann_return / downside_dev
    else:
        downside_dev = None
        sortino = None
        flags.append("no_downside_dispersion")

    mdd = max_drawdown(returns)
    calmar = ann_return / mdd if mdd > 0.0 else None
    if calmar is None:
        flags.append("zero_drawdown")

    pct_positive = float(np.mean(returns > 0.0))
    positives = returns[returns > 0.0]
    if positives.size > 0 and negatives.size > 0:
        avg_pl = float(positives.mean() / abs(negatives.mean()))
    else:
        avg_pl = None
        flags.append("one_sided_returns")

    return MetricsReport(
        ann_return=ann_return,
        ann_std=ann_std,
        downside_dev=downside_dev,
        sharpe=sharpe,
        sortino=sortino,
        mdd=mdd,
        calmar=calmar,
        pct_positive=pct_positive,
        avg_profit_over_avg_loss=avg_pl,
        flags=tuple(flags),
    )


# -- sweeps and per-contract diagnostics -------------------------------------------------


@dataclass(frozen=True)
class CostSweepRow:
    strategy: str
    bp: float  # basis points, e.g. 25 -> rate 0.0025
    sharpe: float | None
    avg_cost_per_contract: float  # mean per-day cost in currency units


def cost_sweep(
    policy: PolicyFn,
    contracts: Sequence[ContractFeatures],
    cfg: RewardConfig,
    rates_bp: Sequence[float] = DEFAULT_SWEEP_BPS,
    index_ranges: dict[str, tuple[int, int]] | None = None,
    strategy: str = "policy",
) -> list[CostSweepRow]:
    """Portfolio Sharpe and average per-contract cost at each cost rate.

    Positions are recomputed per rate; for frozen policies the positions do
    not depend on the rate, so only the cost leg moves.
    """
    rows = []
    for bp_points in rates_bp:
        rate = bp_points * 1e-4
        members = []
        costs = []
        for contract in contracts:
            rng_pair = None if index_ranges is None else index_ranges[contract.series.ticker]
            result = backtest_contract(
                policy, contract, cfg, eval_bp=rate, index_range=rng_pair, strategy=strategy
            )
            members.append(result)
            costs.append(float(np.mean(result.costs_currency)))
        port = portfolio_returns(members)
        metrics = compute_metrics(port.returns)
        rows.append(
            CostSweepRow(
                strategy=strategy,
                bp=float(bp_points),
                sharpe=metrics.sharpe,
                avg_cost_per_contract=float(np.mean(costs)),
            )
        )
    return rows


@dataclass(frozen=True)
class ContractStatsRow:
    strategy: str
    ticker: str
    sharpe: float | None
    return_per_turnover: float | None  # None when the policy never trades
    turnover: float


def per_contract_stats(
    policy: PolicyFn,
    contracts: Sequence[ContractFeatures],
    cfg: RewardConfig,
    eval_bp: float | None = None,
    index_ranges: dict[str, tuple[int, int]] | None = None,
    strategy: str = "policy",
) -> list[ContractStatsRow]:
    """Annualized Sharpe and return per unit of scaled-position turnover."""
    rows = []
    for contract in contracts:
        rng_pair = None if index_ranges is None else index_ranges[contract.series.ticker]
        result = backtest_contract(
            policy, contract, cfg, eval_bp=eval_bp, index_range=rng_pair, strategy=strategy
        )
        metrics = compute_metrics(result.returns)
        scaled = result.scaled_positions
        turnover = float(np.abs(np.diff(np.concatenate(([0.0], scaled)))).sum())
        if turnover > 0.0:
            rpt = float(result.returns.sum() / turnover)
        else:
            rpt = None
        rows.append(
            ContractStatsRow(
                strategy=strategy,
                ticker=contract.series.ticker,
                sharpe=metrics.sharpe,
                return_per_turnover=rpt,
                turnover=turnover,
            )
        )
    return rows
