"""Experiment orchestration: fleet benchmarks, validation scenarios and exports."""

from __future__ import annotations

from dhwlearn.harness.benchmark import (
    BenchmarkReport,
    ExperimentSpec,
    HouseSpec,
    build_manifest,
    run_benchmark,
    summarize_run,
)
from dhwlearn.harness.export import EXPORT_KEYS, build_table, export_plot_data
from dhwlearn.harness.validation import (
    SCENARIOS,
    ReplayModel,
    run_offline_validation,
    run_online_validation,
    simulate,
    train_from_experiences,
)

__all__ = [
    "EXPORT_KEYS",
    "SCENARIOS",
    "BenchmarkReport",
    "ExperimentSpec",
    "HouseSpec",
    "ReplayModel",
    "build_manifest",
    "build_table",
    "export_plot_data",
    "run_benchmark",
    "run_offline_validation",
    "run_online_validation",
    "simulate",
    "summarize_run",
    "train_from_experiences",
]
