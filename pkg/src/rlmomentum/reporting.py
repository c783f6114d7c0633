"""Report emission: metric tables, CSV artifacts, and optional SVG plots.

All CSV floats use shortest round-trip formatting and fixed orderings so
reruns with an equal manifest are byte-identical.  Plots are derived from the
already-written CSVs, never the other way around.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .config import STRATEGY_LABELS
from .errors import UnwritableOutput
from .evaluation import ContractStatsRow, CostSweepRow, MetricsReport

SCOPE_ORDER = ("Commodity", "EquityIndex", "FixedIncome", "FX", "All")

METRIC_HEADERS = (
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

# risk columns where the best value is the smallest
_LOWER_BETTER = {"ann_std", "downside_dev", "mdd"}


@dataclass(frozen=True)
class MetricsRow:
    scope: str
    strategy: str
    report: MetricsReport


def _fmt(value) -> str:
    return "" if value is None else repr(float(value))


def _open_writer(path: Path):
    try:
        return open(path, "w", newline="", encoding="utf-8")
    except OSError as exc:
        raise UnwritableOutput(f"cannot write {path}: {exc}") from exc


def write_metrics_csv(rows: Sequence[MetricsRow], path: str | Path) -> None:
    with _open_writer(Path(path)) as fh:
        writer = csv.writer(fh)
        writer.writerow(["scope", "strategy", *METRIC_HEADERS, "flags"])
        for row in rows:
            writer.writerow(
                [
                    row.scope,
                    row.strategy,
                    *[_fmt(v) for v in row.report.as_row()],
                    ";".join(row.report.flags),
                ]
            )


def write_equity_csv(curves: dict[str, tuple], path: str | Path) -> None:
    """``curves`` maps strategy -> (dates, cumulative returns)."""
    with _open_writer(Path(path)) as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "strategy", "cum_return"])
        for strategy in sorted(curves):
            dates, cum = curves[strategy]
            for d, v in zip(dates, cum):
                writer.writerow([d.isoformat(), strategy, repr(float(v))])


def write_cost_sweep_csv(rows: Sequence[CostSweepRow], path: str | Path) -> None:
    with _open_writer(Path(path)) as fh:
        writer = csv.writer(fh)
        writer.writerow(["strategy", "bp", "sharpe", "avg_cost_per_contract"])
        for row in rows:
            writer.writerow(
                [row.strategy, repr(row.bp), _fmt(row.sharpe), repr(row.avg_cost_per_contract)]
            )


def write_per_contract_csv(rows: Sequence[ContractStatsRow], path: str | Path) -> None:
    with _open_writer(Path(path)) as fh:
        writer = csv.writer(fh)
        writer.writerow(["strategy", "ticker", "sharpe", "return_per_turnover", "turnover"])
        for row in rows:
            writer.writerow(
                [
                    row.strategy,
                    row.ticker,
                    _fmt(row.sharpe),
                    _fmt(row.return_per_turnover),
                    repr(row.turnover),
                ]
            )


def render_metrics_table(rows: Sequence[MetricsRow]) -> str:
    """Text table grouped by scope; the best value per column in each group
    is flagged with '*' (smaller is better for the risk columns)."""
    by_scope: dict[str, list[MetricsRow]] = {}
    for row in rows:
        by_scope.setdefault(row.scope, []).append(row)

    col_heads = ["strategy", *METRIC_HEADERS]
    widths = [max(10, len(h) + 2) for h in col_heads]
    lines: list[str] = []

    def fmt_cell(text: str, j: int) -> str:
        return text.rjust(widths[j]) if j else text.ljust(widths[j])

    for scope in [s for s in SCOPE_ORDER if s in by_scope]:
        group = by_scope[scope]
        lines.append(f"== {scope} ==")
        lines.append("".join(fmt_cell(h, j) for j, h in enumerate(col_heads)))
        best: dict[str, float | None] = {}
        for name in METRIC_HEADERS:
            values = [
                getattr(r.report, name) for r in group if getattr(r.report, name) is not None
            ]
            if not values:
                best[name] = None
            else:
                best[name] = min(values) if name in _LOWER_BETTER else max(values)
        for row in group:
            cells = [STRATEGY_LABELS.get(row.strategy, row.strategy)]
            for name in METRIC_HEADERS:
                value = getattr(row.report, name)
                if value is None:
                    cells.append("n/a")
                else:
                    mark = "*" if best[name] is not None and value == best[name] else ""
                    cells.append(f"{value:.3f}{mark}")
            lines.append("".join(fmt_cell(c, j) for j, c in enumerate(cells)))
        lines.append("")
    return "\n".join(lines)


def write_report_txt(rows: Sequence[MetricsRow], path: str | Path) -> None:
    Path(path).write_text(render_metrics_table(rows), encoding="utf-8")


# -- plots (derived artifacts) ---------------------------------------------------


def _matplotlib():
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "rlmomentum"
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path: Path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})


def plot_equity_curves(equity_csv: str | Path, out_path: str | Path) -> None:
    plt = _matplotlib()
    series: dict[str, tuple[list, list]] = {}
    with open(equity_csv, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            dates, values = series.setdefault(row["strategy"], ([], []))
            dates.append(row["date"])
            values.append(float(row["cum_return"]))
    fig, ax = plt.subplots(figsize=(8, 4))
    for strategy in sorted(series):
        dates, values = series[strategy]
        ax.plot(range(len(values)), values, label=strategy)
    ax.set_xlabel("trading day")
    ax.set_ylabel("cumulative trade return")
    ax.legend(loc="upper left", fontsize=8)
    fig.tight_layout()
    _save(fig, Path(out_path))
    plt.close(fig)


def plot_cost_sweep(sweep_csv: str | Path, out_path: str | Path) -> None:
    plt = _matplotlib()
    series: dict[str, tuple[list, list]] = {}
    with open(sweep_csv, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            xs, ys = series.setdefault(row["strategy"], ([], []))
            if row["sharpe"]:
                xs.append(float(row["bp"]))
                ys.append(float(row["sharpe"]))
    fig, ax = plt.subplots(figsize=(6, 4))
    for strategy in sorted(series):
        xs, ys = series[strategy]
        ax.plot(xs, ys, marker="o", label=strategy)
    ax.axhline(0.0, color="grey", linewidth=0.8)
    ax.set_xlabel("cost rate (bp)")
    ax.set_ylabel("annualized Sharpe")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, Path(out_path))
    plt.close(fig)


def plot_per_contract(per_contract_csv: str | Path, out_path: str | Path) -> None:
    plt = _matplotlib()
    sharpes: dict[str, list[float]] = {}
    with open(per_contract_csv, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            if row["sharpe"]:
                sharpes.setdefault(row["strategy"], []).append(float(row["sharpe"]))
    strategies = sorted(sharpes)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.boxplot([sharpes[s] for s in strategies], tick_labels=strategies)
    ax.set_ylabel("per-contract Sharpe")
    fig.tight_layout()
    _save(fig, Path(out_path))
    plt.close(fig)
