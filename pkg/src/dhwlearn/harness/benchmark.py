"""Fleet benchmark: matched default / efficiency house pairs.

House ``i`` of each group shares seed ``i`` and demand class, so both members
of a pair see identical occupant draws and weather; only the controller
differs. Houses run concurrently; the report is a single-threaded reduction
over the finished run logs, in house order.
"""

from __future__ import annotations

import asyncio
import logging
import math
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import metadata
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

import dhwlearn
from dhwlearn.agent import EpisodeRunner, RunLog
from dhwlearn.config import DEMAND_CLASSES, WorkbenchConfig
from dhwlearn.store.base import RunStore

logger = logging.getLogger(__name__)

CONTROLLERS = ("default", "efficiency")
_LIBRARIES = ("numpy", "scipy", "pandas", "scikit-learn", "python-dotenv")


@dataclass(frozen=True)
class HouseSpec:
    index: int
    controller: str
    demand_class: str
    seed: int

    @property
    def run_id(self) -> str:
        return f"{self.controller}-{self.index:02d}-{self.demand_class}-s{self.seed}"


@dataclass(frozen=True)
class ExperimentSpec:
    n_default_houses: int
    n_efficiency_houses: int
    demand_classes: tuple[str, ...] = ("medium",)
    n_days: int = 50
    seeds: tuple[int, ...] = ()
    out_dir: Path = field(default_factory=lambda: Path("./dhw_runs"))

    def __post_init__(self) -> None:
        object.__setattr__(self, "out_dir", Path(self.out_dir))
        object.__setattr__(self, "demand_classes", tuple(self.demand_classes))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.n_default_houses < 0 or self.n_efficiency_houses < 0:
            raise ValueError("house counts must be >= 0")
        if self.n_default_houses + self.n_efficiency_houses < 1:
            raise ValueError("an experiment needs at least one house")
        if not self.demand_classes:
            raise ValueError("demand_classes must not be empty")
        for name in self.demand_classes:
            if name not in DEMAND_CLASSES:
                raise ValueError(
                    f"Invalid demand class '{name}'. Expected: {' | '.join(DEMAND_CLASSES)}"
                )
        if self.n_days < 1:
            raise ValueError("n_days must be >= 1")
        if self.seeds and len(self.seeds) < self.n_pairs:
            raise ValueError(f"need {self.n_pairs} seeds, got {len(self.seeds)}")

    @property
    def n_pairs(self) -> int:
        return max(self.n_default_houses, self.n_efficiency_houses)

    @classmethod
    def from_config(cls, config: WorkbenchConfig, n_days: int | None = None) -> ExperimentSpec:
        h = config.harness
        return cls(
            n_default_houses=h.n_default_houses,
            n_efficiency_houses=h.n_efficiency_houses,
            demand_classes=h.demand_classes,
            n_days=n_days or config.days,
            seeds=tuple(config.seed + i for i in range(max(h.n_default_houses, h.n_efficiency_houses))),
            out_dir=config.out_dir,
        )

    def seed_for(self, index: int) -> int:
        return self.seeds[index] if self.seeds else index

    def houses(self) -> list[HouseSpec]:
        """Default group first, then efficiency group; pair members share index and seed."""
        counts = {"default": self.n_default_houses, "efficiency": self.n_efficiency_houses}
        return [
            HouseSpec(i, kind, self.demand_classes[i % len(self.demand_classes)], self.seed_for(i))
            for kind in CONTROLLERS
            for i in range(counts[kind])
        ]


def house_config(config: WorkbenchConfig, house: HouseSpec, n_days: int) -> WorkbenchConfig:
    return replace(
        config,
        days=n_days,
        occupant=replace(config.occupant, demand_class=house.demand_class),
    )


def _run_house(config: WorkbenchConfig, house: HouseSpec, n_days: int) -> RunLog:
    # Module level so a process pool can pickle it.
    cfg = house_config(config, house, n_days)
    return EpisodeRunner(cfg, house.controller, n_days, house.seed, run_id=house.run_id).run()


# ── Metrics ──


def _reheat_spacing_h(frame: pd.DataFrame, period_min: int) -> np.ndarray:
    """Hours from each reheat completion to the start of the next reheat."""
    starts = frame.index[(frame["reheat"] == 1) & (frame["override"] != "hold")].to_numpy()
    done = frame.index[frame["reheat_completed"].astype(bool)].to_numpy()
    gaps = []
    for c in done:
        later = starts[starts >= c]
        if later.size:
            gaps.append((later[0] - c) * period_min / 60.0)
    return np.asarray(gaps, dtype=float)


def _per_100l(kwh: float, liters: float) -> float:
    return 100.0 * kwh / liters if liters > 0 else math.nan


def summarize_run(log: RunLog, accounting_start: int | None = None) -> dict[str, Any]:
    """Per-house metrics; ``accounting_start`` (period) defaults to the log's warm-up."""
    frame = log.to_frame()
    start = log.warmup_periods if accounting_start is None else accounting_start
    counted = frame[frame["period"] >= start]
    drawn = frame[frame["draw_l"] > 0]
    spacing = _reheat_spacing_h(frame, log.period_min)
    electric_kwh = math.fsum(frame["electric_wh"]) / 1000.0
    counted_kwh = math.fsum(counted["electric_wh"]) / 1000.0
    counted_l = math.fsum(counted["draw_l"])
    return {
        "run_id": log.run_id,
        "controller": log.controller,
        "demand_class": log.demand_class,
        "seed": log.seed,
        "n_days": int(frame["day"].max()) + 1 if len(frame) else 0,
        "accounting_start_period": int(start),
        "electric_kwh": electric_kwh,
        "electric_kwh_counted": counted_kwh,
        "draw_l": math.fsum(frame["draw_l"]),
        "draw_l_counted": counted_l,
        "comfort_violation_l": math.fsum(frame["comfort_loss_l"]),
        "comfort_violation_l_counted": math.fsum(counted["comfort_loss_l"]),
        "kwh_per_100l": _per_100l(counted_kwh, counted_l),
        "n_reheats": int(((frame["reheat"] == 1) & (frame["override"] != "hold")).sum()),
        "reheat_spacing_median_h": float(np.median(spacing)) if spacing.size else math.nan,
        "reheat_spacing_max_h": float(spacing.max()) if spacing.size else math.nan,
        "min_outflow_c": float(drawn["outflow_min_c"].min()) if len(drawn) else math.nan,
        "min_sensor_c": float(frame["sensor_c"].min()) if len(frame) else math.nan,
        "legionella_completions": int(frame["legionella_completed"].astype(bool).sum()),
        "backup_overrides": int((frame["override"] == "backup").sum()),
    }


_ADDITIVE = (
    "electric_kwh",
    "electric_kwh_counted",
    "draw_l",
    "draw_l_counted",
    "comfort_violation_l",
    "comfort_violation_l_counted",
    "n_reheats",
    "legionella_completions",
    "backup_overrides",
)


def summarize_group(houses: list[dict[str, Any]]) -> dict[str, Any]:
    totals: dict[str, Any] = {"n_houses": len(houses)}
    for key in _ADDITIVE:
        values = [h[key] for h in houses]
        totals[key] = int(sum(values)) if isinstance(values[0], int) else math.fsum(values)
    totals["kwh_per_100l"] = _per_100l(totals["electric_kwh_counted"], totals["draw_l_counted"])
    outflow = [h["min_outflow_c"] for h in houses if not math.isnan(h["min_outflow_c"])]
    totals["min_outflow_c"] = min(outflow) if outflow else math.nan
    return totals


def _savings_pct(default_kwh: float, efficiency_kwh: float) -> float:
    return 100.0 * (default_kwh - efficiency_kwh) / default_kwh if default_kwh > 0 else math.nan


@dataclass
class BenchmarkReport:
    houses: list[dict[str, Any]]
    groups: dict[str, dict[str, Any]]
    manifest: dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_logs(
        cls, logs: list[RunLog], accounting_start: int, manifest: dict[str, Any] | None = None
    ) -> BenchmarkReport:
        houses = [summarize_run(log, accounting_start) for log in logs]
        groups = {
            kind: summarize_group(members)
            for kind in CONTROLLERS
            if (members := [h for h in houses if h["controller"] == kind])
        }
        return cls(houses, groups, manifest or {})

    def savings(self) -> dict[str, float]:
        """Efficiency-group energy savings against the default group, percent."""
        if set(self.groups) != set(CONTROLLERS):
            return {}
        d, e = self.groups["default"], self.groups["efficiency"]
        # Per-house means keep unequal groups comparable.
        result = {
            name: _savings_pct(d[key] / d["n_houses"], e[key] / e["n_houses"])
            for name, key in (("counted_pct", "electric_kwh_counted"), ("including_warmup_pct", "electric_kwh"))
        }
        result["kwh_per_100l_pct"] = _savings_pct(d["kwh_per_100l"], e["kwh_per_100l"])
        return result

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "manifest": self.manifest,
            "houses": self.houses,
            "groups": self.groups,
            "savings": self.savings(),
        }

    def houses_frame(self) -> pd.DataFrame:
        return pd.DataFrame.from_records(self.houses)


# ── Manifests ──


def library_versions() -> dict[str, str]:
    versions = {"dhwlearn": dhwlearn.__version__, "python": platform.python_version()}
    for name in _LIBRARIES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


def build_manifest(config: WorkbenchConfig, **fields: Any) -> dict[str, Any]:
    """Run provenance. Carries no wall-clock time so reruns are byte-identical."""
    return {
        "config_hash": config.config_hash(),
        "config": config.to_json_dict() | {"out_dir": None},
        "versions": library_versions(),
        **fields,
    }


# ── Orchestration ──


async def run_houses(
    config: WorkbenchConfig, houses: list[HouseSpec], n_days: int, workers: int = 1
) -> list[RunLog]:
    """Run every house; results come back in ``houses`` order."""
    loop = asyncio.get_running_loop()
    total = len(houses)
    finished = 0

    async def _one(job) -> RunLog:
        nonlocal finished
        log = await job
        finished += 1
        logger.info("House %s done (%d/%d)", log.run_id, finished, total)
        return log

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            jobs = [loop.run_in_executor(pool, _run_house, config, h, n_days) for h in houses]
            return list(await asyncio.gather(*(_one(j) for j in jobs)))

    # One house at a time; numpy already saturates a core.
    logs = []
    for h in houses:
        logs.append(await _one(asyncio.to_thread(_run_house, config, h, n_days)))
    return logs


async def run_benchmark(
    spec: ExperimentSpec,
    config: WorkbenchConfig,
    store: RunStore,
    *,
    workers: int | None = None,
) -> BenchmarkReport:
    """Run the matched-pair fleet, persist every log and the report."""
    houses = spec.houses()
    logger.info(
        "Benchmark: %d default + %d efficiency houses, %d days",
        spec.n_default_houses,
        spec.n_efficiency_houses,
        spec.n_days,
    )
    logs = await run_houses(config, houses, spec.n_days, workers or config.workers)
    for house, log in zip(houses, logs):
        manifest = build_manifest(
            house_config(config, house, spec.n_days),
            run_id=log.run_id,
            controller=house.controller,
            seed=house.seed,
            pair=house.index,
        )
        await store.save_run_log(log, manifest)

    accounting_start = config.agent.warmup_days * config.periods_per_day
    manifest = build_manifest(
        config,
        experiment={
            "n_default_houses": spec.n_default_houses,
            "n_efficiency_houses": spec.n_efficiency_houses,
            "demand_classes": list(spec.demand_classes),
            "n_days": spec.n_days,
            "seeds": [spec.seed_for(i) for i in range(spec.n_pairs)],
        },
        accounting_start_period=accounting_start,
    )
    report = BenchmarkReport.from_logs(logs, accounting_start, manifest)
    await store.save_report("benchmark", report.to_json_dict())
    await store.save_table("benchmark-houses", report.houses_frame())
    savings = report.savings()
    if savings:
        logger.info("Efficiency group savings after warm-up: %.1f %%", savings["counted_pct"])
    return report
