"""Deep-RL trading agents for daily futures with a walk-forward backtester."""

__version__ = "0.1.0"
