import sys
from datetime import date
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
SRC = ROOT / "src"
if str(SRC) not in sys.path:
    sys.path.insert(0, str(SRC))

from rlmomentum.indicators import prepare_contract
from rlmomentum.market_data import PriceSeries, SyntheticSpec, generate_synthetic


def make_series(closes, ticker="ZC", asset_class="Commodity", start=date(2005, 1, 3)):
    """PriceSeries over a business-day calendar from a raw close vector."""
    from rlmomentum.market_data import business_day_calendar

    closes = np.asarray(closes, dtype=np.float64)
    return PriceSeries(
        ticker=ticker,
        asset_class=asset_class,
        dates=business_day_calendar(start, closes.shape[0]),
        closes=closes,
    )


@pytest.fixture(scope="session")
def trending_series():
    """1200 noisy up-drift days, enough history for states plus trading."""
    spec = SyntheticSpec(
        n_days=1200,
        drift_regimes=((1200, 0.25),),
        annualized_vol=0.15,
        start_price=100.0,
        ticker="ZC",
    )
    return generate_synthetic(spec, seed=11)


@pytest.fixture(scope="session")
def trending_contract(trending_series):
    return prepare_contract(trending_series)


@pytest.fixture(scope="session")
def choppy_contract():
    spec = SyntheticSpec(
        n_days=1200,
        drift_regimes=((300, 0.4), (300, -0.4), (300, 0.4), (300, -0.4)),
        annualized_vol=0.2,
        start_price=50.0,
        ticker="KC",
    )
    return prepare_contract(generate_synthetic(spec, seed=23))
