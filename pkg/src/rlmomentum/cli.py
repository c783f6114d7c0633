"""Command-line pipeline: synth, features, train, backtest, sweep, report.

Every command works under one run root (``--root``, or $RLMOMENTUM_OUT, or
./rlmomentum_out) with the layout::

    root/data/*.csv, catalog.csv     synthetic or user-supplied daily closes
    root/features/*.csv              feature dumps
    root/checkpoints/*.json (+curves/) trained policies and training curves
    root/reports/*.csv, report.txt   metrics, equity, sweep, per-contract
    root/manifest.json               config hash + seed of the last command

Exit codes: 0 success, 2 configuration error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .agents import PolicyCheckpoint, greedy_positions, train, write_training_curve
from .baselines import BaselineSpec, baseline_positions
from .config import RunConfig
from .env import RewardConfig
from .errors import BadSpec, InsufficientHistory, RLMomentumError
from .evaluation import (
    ContractStatsRow,
    CostSweepRow,
    TradeReturnSeries,
    backtest_contract,
    compute_metrics,
    portfolio_returns,
    vol_target_overlay,
)
from .indicators import ContractFeatures, compute_features, prepare_contract, write_features_csv
from .market_data import (
    ASSET_CLASSES,
    bundled_universe,
    default_catalog,
    generate_synthetic,
    load_catalog,
    load_csv,
    walk_forward_splits,
    write_catalog,
    write_csv,
)
from .reporting import (
    MetricsRow,
    plot_cost_sweep,
    plot_equity_curves,
    plot_per_contract,
    write_cost_sweep_csv,
    write_equity_csv,
    write_metrics_csv,
    write_per_contract_csv,
    write_report_txt,
)

RL_STRATEGIES = ("dqn", "pg", "a2c")
BASELINE_SPECS = {
    "long": BaselineSpec("long"),
    "signr": BaselineSpec("signr"),
    "macd": BaselineSpec("macd"),
}


def _root_dir(args) -> Path:
    root = args.root or os.environ.get("RLMOMENTUM_OUT") or "rlmomentum_out"
    return Path(root)


def _write_manifest(root: Path, cfg: RunConfig, command: str) -> None:
    root.mkdir(parents=True, exist_ok=True)
    (root / "manifest.json").write_text(cfg.manifest(command, __version__), encoding="utf-8")


def _load_config(args) -> RunConfig:
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise BadSpec(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    return RunConfig.load(args.config, overrides)


# -- data plumbing ------------------------------------------------------------------


def _data_dir(root: Path, args) -> Path:
    return Path(args.data) if getattr(args, "data", None) else root / "data"


def _load_universe(data_dir: Path) -> list:
    catalog_path = data_dir / "catalog.csv"
    catalog = load_catalog(catalog_path) if catalog_path.exists() else default_catalog()
    files = sorted(p for p in data_dir.glob("*.csv") if p.name != "catalog.csv")
    if not files:
        raise BadSpec(f"no price CSVs found under {data_dir}")
    return [load_csv(path, catalog) for path in files]


def _prepare_contracts(series_list) -> list[ContractFeatures]:
    return [prepare_contract(s) for s in sorted(series_list, key=lambda s: s.ticker)]


def _splits_for(contracts, cfg: RunConfig):
    all_dates = sorted({d for c in contracts for d in c.series.dates})
    return walk_forward_splits(
        all_dates,
        cfg.int_of("data.retrain_interval_years"),
        cfg.int_of("data.first_test_year"),
    )


def _test_segment(contract: ContractFeatures, split) -> tuple[int, int] | None:
    t0 = contract.series.index_of_first_date_on_or_after(split.test_range[0])
    t1 = contract.series.index_of_last_date_on_or_before(split.test_range[1])
    if t0 is None or t1 is None:
        return None
    t0 = max(t0, contract.first_state_index)
    if t1 <= t0:
        return None
    return t0, t1


def _checkpoint_path(root: Path, algo: str, asset_class: str, split) -> Path:
    return root / "checkpoints" / f"{algo}_{asset_class}_{split.test_range[0].year}.json"


def _positions_fn(strategy: str, checkpoint: PolicyCheckpoint | None):
    if strategy in BASELINE_SPECS:
        spec = BASELINE_SPECS[strategy]

        def fn(contract, t0, t1):
            return baseline_positions(spec, contract.series.closes, t0, t1)

        return fn
    if checkpoint is None:
        raise BadSpec(f"strategy {strategy!r} needs a trained checkpoint")

    def fn(contract, t0, t1):
        return greedy_positions(checkpoint, contract, t0, t1)

    return fn


def _stitched_backtest(
    strategy: str,
    contract: ContractFeatures,
    splits,
    checkpoints: dict,
    reward_cfg: RewardConfig,
    bp: float,
) -> TradeReturnSeries | None:
    """Concatenate per-split out-of-sample backtests (flat at each inception)."""
    dates: list = []
    parts = {
        "returns": [],
        "actions": [],
        "costs": [],
        "costs_currency": [],
        "scaled_positions": [],
    }
    for split in splits:
        segment = _test_segment(contract, split)
        if segment is None:
            continue
        checkpoint = checkpoints.get((strategy, contract.series.asset_class, split.test_range[0]))
        result = backtest_contract(
            _positions_fn(strategy, checkpoint),
            contract,
            reward_cfg,
            eval_bp=bp,
            index_range=segment,
            strategy=strategy,
        )
        dates.extend(result.dates)
        for name in parts:
            parts[name].append(getattr(result, name))
    if not dates:
        return None
    return TradeReturnSeries(
        ticker=contract.series.ticker,
        strategy=strategy,
        dates=tuple(dates),
        **{name: np.concatenate(chunks) for name, chunks in parts.items()},
    )


def _load_checkpoints(root: Path, strategies, contracts, splits) -> dict:
    out = {}
    classes = sorted({c.series.asset_class for c in contracts})
    for strategy in strategies:
        if strategy not in RL_STRATEGIES:
            continue
        for asset_class in classes:
            for split in splits:
                path = _checkpoint_path(root, strategy, asset_class, split)
                if not path.exists():
                    raise BadSpec(
                        f"missing checkpoint {path}; run the train command first"
                    )
                out[(strategy, asset_class, split.test_range[0])] = PolicyCheckpoint.load(path)
    return out


# -- commands ----------------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = _load_config(args)
    root = _root_dir(args)
    data_dir = root / "data"
    data_dir.mkdir(parents=True, exist_ok=True)
    base_seed = cfg.seed
    write_catalog(default_catalog(), data_dir / "catalog.csv")
    for offset, spec in enumerate(bundled_universe()):
        series = generate_synthetic(spec, seed=base_seed + offset)
        write_csv(series, data_dir / f"{spec.ticker.lower()}.csv")
    _write_manifest(root, cfg, "synth")
    print(f"wrote {len(bundled_universe())} contracts under {data_dir}")
    return 0


def cmd_features(args) -> int:
    cfg = _load_config(args)
    root = _root_dir(args)
    series_list = _load_universe(_data_dir(root, args))
    out_dir = root / "features"
    out_dir.mkdir(parents=True, exist_ok=True)
    wanted = args.ticker.upper() if args.ticker else None
    count = 0
    for series in sorted(series_list, key=lambda s: s.ticker):
        if wanted and series.ticker != wanted:
            continue
        fm = compute_features(series)
        write_features_csv(fm, out_dir / f"{series.ticker.lower()}_features.csv")
        count += 1
    if count == 0:
        raise BadSpec(f"ticker {args.ticker!r} not found in data")
    _write_manifest(root, cfg, "features")
    print(f"wrote features for {count} contracts under {out_dir}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    root = _root_dir(args)
    contracts = _prepare_contracts(_load_universe(_data_dir(root, args)))
    splits = _splits_for(contracts, cfg)
    reward_cfg = cfg.reward_config()
    algos = [a for a in (cfg.strategies() if args.algo == "all" else [args.algo]) if a in RL_STRATEGIES]
    if not algos:
        raise BadSpec("no RL algorithms selected for training")
    ckpt_dir = root / "checkpoints"
    curve_dir = ckpt_dir / "curves"
    curve_dir.mkdir(parents=True, exist_ok=True)
    classes = sorted({c.series.asset_class for c in contracts})
    for algo_idx, algo in enumerate(algos):
        agent_cfg = cfg.agent_config(algo)
        for class_idx, asset_class in enumerate(classes):
            class_contracts = [c for c in contracts if c.series.asset_class == asset_class]
            for split_idx, split in enumerate(splits):
                seed = cfg.seed + 7919 * RL_STRATEGIES.index(algo) + 101 * class_idx + split_idx
                result = train(algo, class_contracts, split, agent_cfg, reward_cfg, seed)
                path = _checkpoint_path(root, algo, asset_class, split)
                result.checkpoint.save(path)
                write_training_curve(
                    result.curve, curve_dir / (path.stem + "_curve.csv")
                )
                print(f"trained {algo} / {asset_class} / test {split.test_range[0].year}: "
                      f"{result.checkpoint.metadata['env_steps']} env steps -> {path.name}")
    _write_manifest(root, cfg, "train")
    return 0


def _load_run_inputs(root: Path, args, cfg: RunConfig):
    contracts = _prepare_contracts(_load_universe(_data_dir(root, args)))
    splits = _splits_for(contracts, cfg)
    strategies = cfg.strategies()
    checkpoints = _load_checkpoints(root, strategies, contracts, splits)
    return contracts, splits, strategies, checkpoints


def _collect_results(contracts, splits, strategies, checkpoints, reward_cfg, rate):
    results: dict[str, dict[str, TradeReturnSeries]] = {}
    for strategy in strategies:
        per_ticker = {}
        for contract in contracts:
            stitched = _stitched_backtest(
                strategy, contract, splits, checkpoints, reward_cfg, rate
            )
            if stitched is not None:
                per_ticker[contract.series.ticker] = stitched
        if not per_ticker:
            raise InsufficientHistory(f"no testable data for strategy {strategy}")
        results[strategy] = per_ticker
    return results


def cmd_backtest(args) -> int:
    cfg = _load_config(args)
    root = _root_dir(args)
    reward_cfg = cfg.reward_config()
    contracts, splits, strategies, checkpoints = _load_run_inputs(root, args, cfg)
    results = _collect_results(
        contracts, splits, strategies, checkpoints, reward_cfg, reward_cfg.bp
    )
    overlay = cfg.bool_of("eval.overlay")
    sigma_tgt = cfg.float_of("reward.sigma_tgt")
    vol_floor = cfg.float_of("reward.vol_floor")
    calendar = cfg.values["eval.calendar"]
    by_class: dict[str, list[str]] = {}
    for c in contracts:
        by_class.setdefault(c.series.asset_class, []).append(c.series.ticker)
    scopes = [(cls, by_class[cls]) for cls in ASSET_CLASSES if cls in by_class]
    scopes.append(("All", [c.series.ticker for c in contracts]))

    metric_rows: list[MetricsRow] = []
    equity_curves: dict[str, tuple] = {}
    stats_rows: list[ContractStatsRow] = []
    for strategy in strategies:
        per_ticker = results[strategy]
        for scope, tickers in scopes:
            members = [per_ticker[t] for t in tickers if t in per_ticker]
            if not members:
                continue
            port = portfolio_returns(members, calendar=calendar)
            if overlay:
                port = vol_target_overlay(port, sigma_tgt, vol_floor)
            metric_rows.append(
                MetricsRow(scope=scope, strategy=strategy, report=compute_metrics(port.returns))
            )
            if scope == "All":
                cum = np.cumprod(1.0 + port.returns) - 1.0
                equity_curves[strategy] = (port.dates, cum)
        for ticker in sorted(per_ticker):
            series = per_ticker[ticker]
            scaled = series.scaled_positions
            turnover = float(abs(scaled[0]) + np.abs(np.diff(scaled)).sum())
            sharpe = compute_metrics(series.returns).sharpe
            stats_rows.append(
                ContractStatsRow(
                    strategy=strategy,
                    ticker=ticker,
                    sharpe=sharpe,
                    return_per_turnover=(
                        float(series.returns.sum() / turnover) if turnover > 0 else None
                    ),
                    turnover=turnover,
                )
            )

    report_dir = root / "reports"
    report_dir.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(metric_rows, report_dir / "metrics.csv")
    write_equity_csv(equity_curves, report_dir / "equity_curve.csv")
    write_per_contract_csv(stats_rows, report_dir / "per_contract.csv")
    write_report_txt(metric_rows, report_dir / "report.txt")
    _write_manifest(root, cfg, "backtest")
    print((root / "reports" / "report.txt").read_text())
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    root = _root_dir(args)
    reward_cfg = cfg.reward_config()
    contracts, splits, strategies, checkpoints = _load_run_inputs(root, args, cfg)
    rows: list[CostSweepRow] = []
    for bp_points in cfg.sweep_rates_bp():
        rate = bp_points * 1e-4
        results = _collect_results(contracts, splits, strategies, checkpoints, reward_cfg, rate)
        for strategy in strategies:
            members = [results[strategy][c.series.ticker] for c in contracts
                       if c.series.ticker in results[strategy]]
            port = portfolio_returns(members, calendar=cfg.values["eval.calendar"])
            metrics = compute_metrics(port.returns)
            avg_cost = float(np.mean([m.costs_currency.mean() for m in members]))
            rows.append(
                CostSweepRow(
                    strategy=strategy,
                    bp=float(bp_points),
                    sharpe=metrics.sharpe,
                    avg_cost_per_contract=avg_cost,
                )
            )
    report_dir = root / "reports"
    report_dir.mkdir(parents=True, exist_ok=True)
    write_cost_sweep_csv(rows, report_dir / "cost_sweep.csv")
    _write_manifest(root, cfg, "sweep")
    print(f"wrote {report_dir / 'cost_sweep.csv'} ({len(rows)} rows; positions are "
          "recomputed per rate but frozen policies do not change them)")
    return 0


def cmd_report(args) -> int:
    cfg = _load_config(args)
    root = _root_dir(args)
    report_dir = root / "reports"
    metrics_csv = report_dir / "metrics.csv"
    if not metrics_csv.exists():
        raise BadSpec(f"{metrics_csv} not found; run the backtest command first")
    import csv as _csv

    from .evaluation import MetricsReport

    rows = []
    with open(metrics_csv, newline="", encoding="utf-8") as fh:
        for record in _csv.DictReader(fh):
            report = MetricsReport(
                ann_return=float(record["ann_return"]),
                ann_std=float(record["ann_std"]) if record["ann_std"] else None,
                downside_dev=float(record["downside_dev"]) if record["downside_dev"] else None,
                sharpe=float(record["sharpe"]) if record["sharpe"] else None,
                sortino=float(record["sortino"]) if record["sortino"] else None,
                mdd=float(record["mdd"]),
                calmar=float(record["calmar"]) if record["calmar"] else None,
                pct_positive=float(record["pct_positive"]),
                avg_profit_over_avg_loss=(
                    float(record["avg_profit_over_avg_loss"])
                    if record["avg_profit_over_avg_loss"]
                    else None
                ),
                flags=tuple(f for f in record["flags"].split(";") if f),
            )
            rows.append(MetricsRow(scope=record["scope"], strategy=record["strategy"], report=report))
    write_report_txt(rows, report_dir / "report.txt")
    print(report_dir / "report.txt")
    if args.plots:
        plots_dir = report_dir / "plots"
        plots_dir.mkdir(exist_ok=True)
        if (report_dir / "equity_curve.csv").exists():
            plot_equity_curves(report_dir / "equity_curve.csv", plots_dir / "equity_curves.svg")
        if (report_dir / "cost_sweep.csv").exists():
            plot_cost_sweep(report_dir / "cost_sweep.csv", plots_dir / "cost_sweep.svg")
        if (report_dir / "per_contract.csv").exists():
            plot_per_contract(report_dir / "per_contract.csv", plots_dir / "per_contract.svg")
        print(f"plots under {plots_dir}")
    _write_manifest(root, cfg, "report")
    return 0


# -- argument parsing -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rlmomentum",
        description="Deep-RL futures trading research pipeline on synthetic or user data.",
    )
    parser.add_argument("--version", action="version", version=f"rlmomentum {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, with_data=True):
        p.add_argument("--root", help="run directory (default $RLMOMENTUM_OUT or ./rlmomentum_out)")
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key (repeatable; wins over the file)")
        if with_data:
            p.add_argument("--data", help="price CSV directory (default root/data)")

    p = sub.add_parser("synth", help="generate the bundled synthetic universe")
    common(p, with_data=False)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("features", help="dump state features per contract")
    common(p)
    p.add_argument("--ticker", help="restrict to one ticker")
    p.set_defaults(fn=cmd_features)

    p = sub.add_parser("train", help="train RL agents per asset class and split")
    common(p)
    p.add_argument("--algo", default="all", choices=["all", *RL_STRATEGIES])
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("backtest", help="walk-forward backtest and metric report")
    common(p)
    p.set_defaults(fn=cmd_backtest)

    p = sub.add_parser("sweep", help="re-run backtests across cost rates")
    common(p)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("report", help="re-render the report table (and plots) from CSVs")
    common(p, with_data=False)
    p.add_argument("--plots", action="store_true", help="also render SVG plots")
    p.set_defaults(fn=cmd_report)
    return parser


def run_command(argv) -> int:
    """Parse and execute; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse errors are config errors
        return 0 if exc.code in (0, None) else 2
    try:
        return args.fn(args)
    except BadSpec as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (RLMomentumError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
