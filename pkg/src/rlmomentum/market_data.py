"""Daily futures price data: loading, validation, synthesis and walk-forward splits.

A :class:`PriceSeries` is an immutable, strictly date-ordered vector of daily
close prices for one continuous contract.  Real data comes in via
:func:`load_csv`; when no real data is available :func:`generate_synthetic`
produces geometric-Brownian paths with piecewise-constant drift so the whole
pipeline stays runnable end to end.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    BadSpec,
    DuplicateDate,
    InsufficientHistory,
    MalformedRow,
    NonPositivePrice,
    UnknownTicker,
)

ASSET_CLASSES = ("Commodity", "EquityIndex", "FixedIncome", "FX")

# Minimum series length before any trading state exists: a 252-day lookback,
# the 63-day MACD normalisation window and one tradable day.
MIN_STATE_HISTORY = 316

TRADING_DAYS_PER_YEAR = 252


@dataclass(frozen=True)
class PriceSeries:
    """One contract's daily closes, strictly increasing in date."""

    ticker: str
    asset_class: str
    dates: tuple[date, ...]
    closes: np.ndarray

    def __post_init__(self):
        if self.asset_class not in ASSET_CLASSES:
            raise BadSpec(f"unknown asset class {self.asset_class!r}")
        closes = np.asarray(self.closes, dtype=np.float64)
        if len(self.dates) != closes.shape[0]:
            raise BadSpec("dates and closes must have equal length")
        if closes.size == 0:
            raise BadSpec("empty price series")
        if not np.all(np.isfinite(closes)):
            raise MalformedRow(f"{self.ticker}: non-finite close value")
        if np.any(closes <= 0.0):
            i = int(np.argmax(closes <= 0.0))
            raise NonPositivePrice(
                f"{self.ticker}: close {closes[i]} on {self.dates[i]} (row {i})"
            )
        for i in range(1, len(self.dates)):
            if self.dates[i] <= self.dates[i - 1]:
                raise DuplicateDate(
                    f"{self.ticker}: dates not strictly increasing at {self.dates[i]}"
                )
        closes.setflags(write=False)
        object.__setattr__(self, "closes", closes)
        object.__setattr__(self, "dates", tuple(self.dates))

    def __len__(self) -> int:
        return len(self.dates)

    def index_of_first_date_on_or_after(self, d: date) -> int | None:
        for i, di in enumerate(self.dates):
            if di >= d:
                return i
        return None

    def index_of_last_date_on_or_before(self, d: date) -> int | None:
        for i in range(len(self.dates) - 1, -1, -1):
            if self.dates[i] <= d:
                return i
        return None


@dataclass(frozen=True)
class CatalogEntry:
    ticker: str
    description: str
    asset_class: str


@dataclass
class InstrumentCatalog:
    """Ticker -> (description, asset class) lookup used to label CSV files."""

    entries: list[CatalogEntry]
    _by_ticker: dict[str, CatalogEntry] = field(init=False, repr=False)

    def __post_init__(self):
        by_ticker: dict[str, CatalogEntry] = {}
        for e in self.entries:
            if e.asset_class not in ASSET_CLASSES:
                raise BadSpec(f"{e.ticker}: unknown asset class {e.asset_class!r}")
            if e.ticker in by_ticker:
                raise BadSpec(f"duplicate catalog ticker {e.ticker!r}")
            by_ticker[e.ticker] = e
        self._by_ticker = by_ticker

    def lookup(self, ticker: str) -> CatalogEntry | None:
        return self._by_ticker.get(ticker)

    def tickers(self) -> list[str]:
        return [e.ticker for e in self.entries]


_DEFAULT_ENTRIES = [
    # commodities
    ("CC", "COCOA", "Commodity"),
    ("DA", "MILK III, Comp", "Commodity"),
    ("GI", "GOLDMAN SAKS C. I.", "Commodity"),
    ("JO", "ORANGE JUICE", "Commodity"),
    ("KC", "COFFEE", "Commodity"),
    ("KW", "WHEAT, KC", "Commodity"),
    ("LB", "LUMBER", "Commodity"),
    ("NR", "ROUGH RICE", "Commodity"),
    ("SB", "SUGAR #11", "Commodity"),
    ("ZA", "PALLADIUM, Electronic", "Commodity"),
    ("ZC", "CORN, Electronic", "Commodity"),
    ("ZF", "FEEDER CATTLE, Electronic", "Commodity"),
    ("ZG", "GOLD, Electronic", "Commodity"),
    ("ZH", "HEATING OIL, Electronic", "Commodity"),
    ("ZI", "SILVER, Electronic", "Commodity"),
    ("ZK", "COPPER, Electronic", "Commodity"),
    ("ZL", "SOYBEAN OIL, Electronic", "Commodity"),
    ("ZN", "NATURAL GAS, Electronic", "Commodity"),
    ("ZO", "OATS, Electronic", "Commodity"),
    ("ZP", "PLATINUM, electronic", "Commodity"),
    ("ZR", "ROUGH RICE, Electronic", "Commodity"),
    ("ZT", "LIVE CATTLE, Electronic", "Commodity"),
    ("ZU", "CRUDE OIL, Electronic", "Commodity"),
    ("ZW", "WHEAT, Electronic", "Commodity"),
    ("ZZ", "LEAN HOGS, Electronic", "Commodity"),
    # equity indexes
    ("CA", "CAC40 INDEX", "EquityIndex"),
    ("EN", "NASDAQ, MINI", "EquityIndex"),
    ("ER", "RUSSELL 2000, MINI", "EquityIndex"),
    ("ES", "S&P 500, MINI", "EquityIndex"),
    ("LX", "FTSE 100 INDEX", "EquityIndex"),
    ("MD", "S&P 400 (Mini Electronic)", "EquityIndex"),
    ("SC", "S&P 500, Composite", "EquityIndex"),
    ("SP", "S&P 500, Day Session", "EquityIndex"),
    ("XU", "DOW JONES EUROSTOXX50", "EquityIndex"),
    ("XX", "DOW JONES STOXX 50", "EquityIndex"),
    ("YM", "Mini Dow Jones ($5.00)", "EquityIndex"),
    # fixed income
    ("DT", "EURO BOND (BUND)", "FixedIncome"),
    ("FB", "T-NOTE, 5-year Composite", "FixedIncome"),
    ("TY", "T-NOTE, 10-year Composite", "FixedIncome"),
    ("UB", "EURO BOBL", "FixedIncome"),
    ("US", "T-BONDS, Composite", "FixedIncome"),
    # FX
    ("AN", "AUSTRALIAN, Day Session", "FX"),
    ("BN", "BRITISH POUND, Composite", "FX"),
    ("CN", "CANADIAN, Composite", "FX"),
    ("DX", "US DOLLAR INDEX", "FX"),
    ("FN", "EURO, Composite", "FX"),
    ("JN", "JAPANESE YEN, Composite", "FX"),
    ("MP", "MEXICAN PESO", "FX"),
    ("NK", "NIKKEI INDEX", "FX"),
    ("SN", "SWISS FRANC, Composite", "FX"),
]


def default_catalog() -> InstrumentCatalog:
    """The shipped 50-instrument catalog (25/11/5/9 per asset class)."""
    return InstrumentCatalog([CatalogEntry(*row) for row in _DEFAULT_ENTRIES])


def load_catalog(path: str | Path) -> InstrumentCatalog:
    """Read a catalog CSV with header ``ticker,description,asset_class``."""
    entries = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"ticker", "description", "asset_class"} <= set(
            reader.fieldnames
        ):
            raise MalformedRow(f"{path}: expected header ticker,description,asset_class")
        for row in reader:
            entries.append(
                CatalogEntry(row["ticker"].strip(), row["description"].strip(),
                             row["asset_class"].strip())
            )
    return InstrumentCatalog(entries)


def write_catalog(catalog: InstrumentCatalog, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["ticker", "description", "asset_class"])
        for e in catalog.entries:
            writer.writerow([e.ticker, e.description, e.asset_class])


def load_csv(
    path: str | Path,
    catalog: InstrumentCatalog,
    asset_class: str | None = None,
    ticker: str | None = None,
) -> PriceSeries:
    """Load one contract's daily closes from a CSV file.

    The header must contain ``date`` and ``close`` columns (extras ignored).
    The ticker is taken from an explicit argument, a ``ticker`` column, or the
    file name stem, in that order.  Rows are sorted by date; duplicate dates,
    unparseable rows and non-positive prices are rejected.  A ticker missing
    from the catalog needs an ``asset_class`` override.
    """
    path = Path(path)
    rows: list[tuple[date, float]] = []
    file_ticker: str | None = None
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"date", "close"} <= set(reader.fieldnames):
            raise MalformedRow(f"{path}: expected header with date,close columns")
        for lineno, row in enumerate(reader, start=2):
            try:
                d = date.fromisoformat(row["date"].strip())
                c = float(row["close"])
            except (ValueError, TypeError, AttributeError) as exc:
                raise MalformedRow(f"{path}:{lineno}: {exc}") from exc
            if not np.isfinite(c):
                raise MalformedRow(f"{path}:{lineno}: non-finite close {row['close']!r}")
            if c <= 0.0:
                raise NonPositivePrice(f"{path}:{lineno}: close {c} on {d}")
            rows.append((d, c))
            if "ticker" in row and row["ticker"] and file_ticker is None:
                file_ticker = row["ticker"].strip()
    if not rows:
        raise MalformedRow(f"{path}: no data rows")

    resolved = ticker or file_ticker or path.stem.upper()
    entry = catalog.lookup(resolved)
    if entry is None:
        if asset_class is None:
            raise UnknownTicker(
                f"{resolved!r} not in catalog; pass an explicit asset class"
            )
        cls = asset_class
    else:
        cls = asset_class or entry.asset_class

    rows.sort(key=lambda r: r[0])
    for i in range(1, len(rows)):
        if rows[i][0] == rows[i - 1][0]:
            raise DuplicateDate(f"{path}: duplicate date {rows[i][0]}")
    dates = tuple(r[0] for r in rows)
    closes = np.array([r[1] for r in rows], dtype=np.float64)
    return PriceSeries(ticker=resolved, asset_class=cls, dates=dates, closes=closes)


def write_csv(series: PriceSeries, path: str | Path) -> None:
    """Write ``date,close`` rows; closes use shortest round-trip formatting."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "close"])
        for d, c in zip(series.dates, series.closes):
            writer.writerow([d.isoformat(), repr(float(c))])


@dataclass(frozen=True)
class SyntheticSpec:
    """Geometric Brownian path with piecewise-constant annualized drift."""

    n_days: int
    drift_regimes: tuple[tuple[int, float], ...]  # (length in days, annualized drift)
    annualized_vol: float
    start_price: float
    ticker: str = "SYN"
    asset_class: str = "Commodity"
    start_date: date = date(2005, 1, 3)


def business_day_calendar(start: date, n_days: int) -> tuple[date, ...]:
    """Monday-to-Friday calendar of ``n_days`` dates beginning at ``start``."""
    out = []
    d = start
    while d.weekday() >= 5:
        d += timedelta(days=1)
    while len(out) < n_days:
        out.append(d)
        d += timedelta(days=1)
        while d.weekday() >= 5:
            d += timedelta(days=1)
    return tuple(out)


def generate_synthetic(spec: SyntheticSpec, seed: int) -> PriceSeries:
    """Deterministic GBM path: identical seeds give bit-identical series."""
    if spec.n_days < MIN_STATE_HISTORY:
        raise BadSpec(f"n_days must be >= {MIN_STATE_HISTORY}, got {spec.n_days}")
    if spec.annualized_vol < 0:
        raise BadSpec("annualized_vol must be >= 0")
    if spec.start_price <= 0:
        raise BadSpec("start_price must be > 0")
    if not spec.drift_regimes:
        raise BadSpec("at least one drift regime required")
    for length, _ in spec.drift_regimes:
        if length <= 0:
            raise BadSpec("regime lengths must be positive")
    total = sum(length for length, _ in spec.drift_regimes)
    if total < spec.n_days:
        raise BadSpec(f"drift regimes cover {total} days < n_days {spec.n_days}")

    drift = np.empty(spec.n_days, dtype=np.float64)
    pos = 0
    for length, g in spec.drift_regimes:
        if pos >= spec.n_days:
            break
        take = min(length, spec.n_days - pos)
        drift[pos : pos + take] = g
        pos += take

    dt = 1.0 / TRADING_DAYS_PER_YEAR
    sigma = spec.annualized_vol
    rng = np.random.default_rng(seed)
    shocks = rng.standard_normal(spec.n_days - 1)
    log_steps = (drift[1:] - 0.5 * sigma * sigma) * dt + sigma * np.sqrt(dt) * shocks
    log_prices = np.concatenate(([0.0], np.cumsum(log_steps)))
    closes = spec.start_price * np.exp(log_prices)
    dates = business_day_calendar(spec.start_date, spec.n_days)
    return PriceSeries(
        ticker=spec.ticker, asset_class=spec.asset_class, dates=dates, closes=closes
    )


BUNDLED_N_DAYS = 3780  # 15 calendar years of business days starting 2005


def bundled_universe() -> list[SyntheticSpec]:
    """The demo universe: 12 contracts, 3 per asset class, mixed regimes."""
    y = BUNDLED_N_DAYS // 15  # one year of days
    specs = [
        # commodities: choppy, trending, and crash-recovery paths
        ("ZC", "Commodity", 0.25, 45.0, [(3 * y, 0.3), (3 * y, -0.3), (3 * y, 0.25), (3 * y, -0.2), (3 * y, 0.2)]),
        ("KC", "Commodity", 0.28, 120.0, [(15 * y, 0.12)]),
        ("SB", "Commodity", 0.30, 14.0, [(5 * y, -0.2), (10 * y, 0.18)]),
        # equity indexes: mostly upward with one drawdown
        ("ES", "EquityIndex", 0.18, 1200.0, [(15 * y, 0.09)]),
        ("EN", "EquityIndex", 0.22, 1500.0, [(6 * y, 0.18), (1 * y, -0.7), (8 * y, 0.16)]),
        ("CA", "EquityIndex", 0.20, 4000.0, [(4 * y, 0.15), (4 * y, -0.12), (4 * y, 0.12), (3 * y, -0.05)]),
        # fixed income: low vol, persistent trends
        ("TY", "FixedIncome", 0.07, 110.0, [(11 * y, 0.05), (4 * y, -0.01)]),
        ("US", "FixedIncome", 0.10, 115.0, [(8 * y, 0.06), (7 * y, 0.0)]),
        ("DT", "FixedIncome", 0.08, 125.0, [(15 * y, 0.035)]),
        # FX: mean-reverting and drifting
        ("BN", "FX", 0.11, 1.6, [(2 * y, 0.08), (2 * y, -0.08)] * 4),
        ("JN", "FX", 0.12, 0.9, [(15 * y, -0.03)]),
        ("FN", "FX", 0.10, 1.2, [(5 * y, 0.06), (5 * y, -0.06), (5 * y, 0.04)]),
    ]
    return [
        SyntheticSpec(
            n_days=BUNDLED_N_DAYS,
            drift_regimes=tuple((length, drift) for length, drift in regimes),
            annualized_vol=vol,
            start_price=price,
            ticker=ticker,
            asset_class=asset_class,
        )
        for ticker, asset_class, vol, price, regimes in specs
    ]


@dataclass(frozen=True)
class WalkForwardSplit:
    """Expanding train range plus the out-of-sample test block that follows it."""

    train_range: tuple[date, date]
    test_range: tuple[date, date]

    def __post_init__(self):
        if self.train_range[1] >= self.test_range[0]:
            raise BadSpec("train range must end before test range starts")


def walk_forward_splits(
    series_dates: Sequence[date],
    retrain_interval_years: int,
    first_test_year: int,
) -> list[WalkForwardSplit]:
    """Calendar-year walk-forward schedule with an expanding train window.

    The first train range runs from the data start through Dec 31 of
    ``first_test_year - 1``; each test block spans ``retrain_interval_years``
    calendar years (truncated at the data end) and the next train range
    absorbs it.
    """
    if retrain_interval_years < 1:
        raise BadSpec("retrain_interval_years must be >= 1")
    if not series_dates:
        raise InsufficientHistory("empty date index")
    data_start, data_end = series_dates[0], series_dates[-1]
    first_test_start = date(first_test_year, 1, 1)
    if (first_test_start - data_start).days < 365:
        raise InsufficientHistory(
            f"need >= 1 year of data before {first_test_year}, data starts {data_start}"
        )
    if data_end < first_test_start:
        raise InsufficientHistory(f"data ends {data_end}, before test year {first_test_year}")

    splits: list[WalkForwardSplit] = []
    test_year = first_test_year
    while date(test_year, 1, 1) <= data_end:
        test_start = date(test_year, 1, 1)
        test_end = min(date(test_year + retrain_interval_years - 1, 12, 31), data_end)
        train_end = test_start - timedelta(days=1)
        splits.append(
            WalkForwardSplit(train_range=(data_start, train_end),
                             test_range=(test_start, test_end))
        )
        test_year += retrain_interval_years
    return splits
