"""dhwlearn command line.

Every verb prints a JSON summary on stdout; logs go to stderr. Invalid input
and missing files exit with status 2.
"""

from __future__ import annotations

import argparse
import asyncio
import dataclasses
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from dhwlearn import __version__
from dhwlearn.config import DEMAND_CLASSES, WorkbenchConfig
from dhwlearn.dynamics.rollout import LearnedDynamics
from dhwlearn.harness import (
    EXPORT_KEYS,
    SCENARIOS,
    ExperimentSpec,
    export_plot_data,
    run_benchmark,
    run_offline_validation,
    run_online_validation,
    simulate,
    summarize_run,
    train_from_experiences,
)
from dhwlearn.occupant import (
    draws_from_history,
    draws_per_period,
    read_draw_history,
    sample_days,
    write_draw_history,
)
from dhwlearn.store import get_store
from dhwlearn.store.base import RunStore
from dhwlearn.store.file_store import dump_json

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dhwlearn",
        description="Model-based learning controller workbench for domestic hot-water vessels.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", type=Path, default=None, help="JSON config file (or DHW_CONFIG)")
    parser.add_argument("--seed", type=int, default=None, help="Base seed (or DHW_SEED)")
    parser.add_argument("--out", type=Path, default=None, help="Output directory (or DHW_OUT_DIR)")
    parser.add_argument("--days", type=int, default=None, help="Simulated days (or DHW_DAYS)")
    parser.add_argument("--workers", type=int, default=None, help="Parallel houses (or DHW_WORKERS)")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING... (or DHW_LOG_LEVEL)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Run a single house")
    p.add_argument("--controller", choices=("default", "efficiency"), default="efficiency")
    p.add_argument("--demand-class", choices=tuple(DEMAND_CLASSES), default=None)
    p.add_argument("--draws", type=Path, default=None, help="Replay a recorded draw history CSV")

    p = sub.add_parser("train", help="Fit a model on a stored experience buffer")
    p.add_argument("experiences", help="Experience buffer name (the run id of a learning run)")
    p.add_argument("--checkpoint", default="model", help="Name to save the trained model under")

    p = sub.add_parser("benchmark", help="Run the matched default / efficiency fleet")
    p.add_argument("--spec", type=Path, default=None, help="JSON experiment spec")

    p = sub.add_parser("validate-offline", help="Scripted draw scenarios against a checkpoint")
    p.add_argument("--scenario", choices=(*SCENARIOS, "all"), default="all")
    p.add_argument("--checkpoint", default="model", help="Model checkpoint name in the output directory")
    p.add_argument("--oracle", action="store_true", help="Score the replay oracle instead of a model")

    p = sub.add_parser("validate-online", help="Train one house and score its online predictions")
    p.add_argument("--checkpoint", default="model", help="Name to save the trained model under")

    p = sub.add_parser("export", help="Write a plot-ready table")
    p.add_argument("key", help=f"Figure key: {', '.join(EXPORT_KEYS)}")
    p.add_argument("--runs", nargs="*", default=None, help="Run ids (default: every stored run)")
    p.add_argument("--checkpoint", default="model", help="Model checkpoint for fig2")

    p = sub.add_parser("gen-ambient", help="Write a synthetic ambient temperature trace")
    p.add_argument("--output", type=Path, default=None)

    p = sub.add_parser("gen-occupants", help="Write synthetic per-period draw histories")
    p.add_argument("--houses", type=int, default=1)
    p.add_argument("--demand-class", choices=tuple(DEMAND_CLASSES), default=None)
    return parser


def load_config(args: argparse.Namespace) -> WorkbenchConfig:
    """Defaults <- config file <- environment <- command line flags."""
    config = WorkbenchConfig.from_env(config_path=args.config)
    overrides: dict[str, Any] = {}
    for flag, name in (("seed", "seed"), ("days", "days"), ("workers", "workers"), ("out", "out_dir"), ("log_level", "log_level")):
        value = getattr(args, flag)
        if value is not None:
            overrides[name] = value
    return replace(config, **overrides) if overrides else config


def load_experiment(path: Path | None, config: WorkbenchConfig) -> ExperimentSpec:
    base = ExperimentSpec.from_config(config)
    if path is None:
        return base
    raw = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise ValueError(f"Experiment spec {path} must contain a JSON object")
    known = {f.name for f in dataclasses.fields(ExperimentSpec)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ValueError(f"Unknown experiment key(s): {', '.join(unknown)}")
    merged = {name: getattr(base, name) for name in known} | raw
    if "seeds" not in raw:
        n_pairs = max(int(merged["n_default_houses"]), int(merged["n_efficiency_houses"]))
        merged["seeds"] = tuple(config.seed + i for i in range(n_pairs))
    return ExperimentSpec(**merged)


# ── verbs ──


async def _simulate(args: argparse.Namespace, config: WorkbenchConfig, store: RunStore) -> dict[str, Any]:
    if args.demand_class:
        config = replace(config, occupant=replace(config.occupant, demand_class=args.demand_class))
    draws = None
    if args.draws is not None:
        minutes, liters = await asyncio.to_thread(read_draw_history, args.draws)
        n = config.days * config.periods_per_day
        draws = draws_from_history(minutes, liters, config.start_minute, n, config.period_min)
    log = await simulate(config, args.controller, config.days, config.seed, store, draws_l=draws)
    return summarize_run(log)


async def _train(args: argparse.Namespace, config: WorkbenchConfig, store: RunStore) -> dict[str, Any]:
    return await train_from_experiences(config, store, args.experiences, checkpoint=args.checkpoint)


async def _benchmark(args: argparse.Namespace, config: WorkbenchConfig, store: RunStore) -> dict[str, Any]:
    spec = load_experiment(args.spec, config)
    report = await run_benchmark(spec, config, store)
    return {"groups": report.groups, "savings": report.savings()}


async def _validate_offline(args: argparse.Namespace, config: WorkbenchConfig, store: RunStore) -> dict[str, Any]:
    scenarios = SCENARIOS if args.scenario == "all" else (args.scenario,)
    reports = {}
    for scenario in scenarios:
        report = await run_offline_validation(
            scenario, config, store, checkpoint=args.checkpoint, oracle=args.oracle
        )
        report.pop("manifest")
        reports[scenario] = report
    return reports


async def _validate_online(args: argparse.Namespace, config: WorkbenchConfig, store: RunStore) -> dict[str, Any]:
    report = await run_online_validation(config, config.days, config.seed, store, checkpoint=args.checkpoint)
    report.pop("manifest")
    return report


async def _export(args: argparse.Namespace, config: WorkbenchConfig, store: RunStore) -> dict[str, Any]:
    if args.key not in EXPORT_KEYS:
        raise ValueError(f"Unknown figure key '{args.key}'. Valid keys: {', '.join(EXPORT_KEYS)}")
    dynamics = None
    logs = []
    if args.key == "fig2":
        dynamics = LearnedDynamics.from_json_dict(await store.load_checkpoint(args.checkpoint))
    else:
        run_ids = args.runs or await store.list_runs()
        logs = [await store.load_run_log(r) for r in run_ids]
    path = await export_plot_data(logs, args.key, store, dynamics=dynamics)
    return {"key": args.key, "path": path, "runs": [log.run_id for log in logs]}


async def _gen_ambient(args: argparse.Namespace, config: WorkbenchConfig, store: RunStore) -> dict[str, Any]:
    from dhwlearn.forecastio.synthetic import generate_synthetic_trace
    from dhwlearn.forecastio.trace import write_trace

    n = config.days * config.periods_per_day + config.agent.planner.horizon + 1
    trace = generate_synthetic_trace(config.ambient, config.start_minute, n, config.seed, config.period_min)
    output = args.output or config.out_dir / "ambient.csv"
    await asyncio.to_thread(write_trace, output, trace)
    return {"path": str(output), "n_periods": len(trace)}


async def _gen_occupants(args: argparse.Namespace, config: WorkbenchConfig, store: RunStore) -> dict[str, Any]:
    if args.houses < 1:
        raise ValueError("--houses must be >= 1")
    occupant = config.occupant
    if args.demand_class:
        occupant = replace(occupant, demand_class=args.demand_class)
    n = config.days * config.periods_per_day
    start, p = config.start_minute, config.period_min
    timestamps = [start + i * p for i in range(n)]
    written = []
    for house in range(args.houses):
        seed = config.seed + house
        draws = draws_per_period(sample_days(occupant, config.days, seed, start), start, n, p)
        path = config.out_dir / "occupants" / f"house-{house:02d}-s{seed}.csv"
        await asyncio.to_thread(write_draw_history, path, timestamps, np.round(draws, 6))
        written.append({"path": str(path), "seed": seed, "total_l": float(draws.sum())})
    return {"demand_class": occupant.demand_class, "houses": written}


_VERBS = {
    "simulate": _simulate,
    "train": _train,
    "benchmark": _benchmark,
    "validate-offline": _validate_offline,
    "validate-online": _validate_online,
    "export": _export,
    "gen-ambient": _gen_ambient,
    "gen-occupants": _gen_occupants,
}


async def _run(args: argparse.Namespace, config: WorkbenchConfig) -> dict[str, Any]:
    store = get_store(config)
    try:
        return await _VERBS[args.command](args, config, store)
    finally:
        await store.close()


def main(argv: Sequence[str] | None = None) -> int:
    """CLI entry point."""
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args)
        logging.basicConfig(
            level=config.log_level,
            format="%(asctime)s %(levelname)s %(name)s: %(message)s",
            stream=sys.stderr,
        )
        result = asyncio.run(_run(args, config))
    except (ValueError, FileNotFoundError) as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return 2
    sys.stdout.write(dump_json(result))
    return 0


if __name__ == "__main__":
    sys.exit(main())
