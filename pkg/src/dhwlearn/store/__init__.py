"""Run store factory."""

from __future__ import annotations

from pathlib import Path

from dhwlearn.config import WorkbenchConfig
from dhwlearn.store.base import CheckpointError, RunStore

__all__ = ["CheckpointError", "RunStore", "get_store"]


def get_store(config: WorkbenchConfig, out_dir: str | Path | None = None) -> RunStore:
    """Instantiate the store for ``out_dir`` (default: ``config.out_dir``)."""
    from dhwlearn.store.file_store import FileStore

    return FileStore(out_dir or config.out_dir)
