"""Directory-backed run store.

Layout under the output directory:
    runs/{run_id}.csv            per-period run log
    runs/{run_id}.manifest.json  run manifest
    experiences/{name}.csv       agent experience buffers
    models/{name}.json           model checkpoints
    reports/{name}.json          validation and benchmark reports
    tables/{name}.csv            plot-ready exports

JSON is written with sorted keys and no wall-clock content, so seeded runs
reproduce byte-identical files.
"""

from __future__ import annotations

import asyncio
import json
import logging
import re
import threading
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

import pandas as pd

from dhwlearn.agent import RunLog
from dhwlearn.dynamics.experience import Experience, read_experiences, write_experiences
from dhwlearn.store.base import CheckpointError, RunStore, to_jsonable

logger = logging.getLogger(__name__)

_SUFFIXES = {
    "runs": ".csv",
    "manifests": ".manifest.json",
    "experiences": ".csv",
    "models": ".json",
    "reports": ".json",
    "tables": ".csv",
}


def dump_json(payload: dict[str, Any]) -> str:
    return json.dumps(to_jsonable(payload), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


class FileStore(RunStore):
    """File-based store. Zero services required."""

    def __init__(self, out_dir: str | Path) -> None:
        self._dir = Path(out_dir)
        self._locks_lock = threading.Lock()
        self._locks: dict[str, threading.Lock] = {}

    @property
    def root(self) -> Path:
        return self._dir

    def _get_lock(self, key: str) -> threading.Lock:
        """Get or create a per-file lock for thread-safe file I/O."""
        with self._locks_lock:
            if key not in self._locks:
                self._locks[key] = threading.Lock()
            return self._locks[key]

    _SAFE_ID_RE = re.compile(r"^[a-zA-Z0-9_][a-zA-Z0-9._-]{0,99}$")

    def _path(self, kind: str, name: str) -> Path:
        if not self._SAFE_ID_RE.match(name):
            raise ValueError(f"Invalid name: must match [a-zA-Z0-9._-], got '{name}'")
        folder = "runs" if kind == "manifests" else kind
        p = (self._dir / folder / f"{name}{_SUFFIXES[kind]}").resolve()
        if not p.is_relative_to(self._dir.resolve()):
            raise ValueError(f"Invalid name: path escape detected for '{name}'")
        return p

    def _move_aside(self, path: Path) -> None:
        """Keep a corrupt file for inspection under a timestamped name."""
        ts = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%fZ")
        backup_path = path.with_name(f"{path.name}.corrupt-{ts}.bak")
        try:
            path.replace(backup_path)
            logger.warning("Moved corrupt file %s -> %s", path, backup_path)
        except OSError as exc:
            logger.error("Failed to move corrupt file %s: %s", path, exc)

    def _write_text(self, path: Path, text: str) -> None:
        with self._get_lock(str(path)):
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(text, encoding="utf-8")

    def _read_json(self, path: Path) -> dict[str, Any]:
        with self._get_lock(str(path)):
            if not path.exists():
                raise FileNotFoundError(f"Not found: {path}")
            try:
                data = json.loads(path.read_text(encoding="utf-8"))
            except (json.JSONDecodeError, UnicodeDecodeError) as exc:
                logger.warning("Failed to load JSON file %s: %s", path, exc)
                self._move_aside(path)
                raise ValueError(f"Corrupt JSON file {path}: {exc}") from exc
            if not isinstance(data, dict):
                self._move_aside(path)
                raise ValueError(f"Invalid JSON file {path}: expected object, got {type(data).__name__}")
            return data

    async def save_run_log(self, log: RunLog, manifest: dict[str, Any]) -> None:
        def _do() -> None:
            csv_path = self._path("runs", log.run_id)
            self._write_text(csv_path, log.to_frame().to_csv(index=False))
            body = {**manifest, "run": log.metadata()}
            self._write_text(self._path("manifests", log.run_id), dump_json(body))

        await asyncio.to_thread(_do)

    async def load_run_log(self, run_id: str) -> RunLog:
        def _do() -> RunLog:
            manifest = self._read_json(self._path("manifests", run_id))
            frame = pd.read_csv(self._path("runs", run_id))
            return RunLog.from_frame(frame, **manifest["run"])

        return await asyncio.to_thread(_do)

    async def list_runs(self) -> list[str]:
        def _do() -> list[str]:
            folder = self._dir / "runs"
            if not folder.exists():
                return []
            suffix = _SUFFIXES["manifests"]
            return sorted(p.name[: -len(suffix)] for p in folder.glob(f"*{suffix}"))

        return await asyncio.to_thread(_do)

    async def save_experiences(self, name: str, experiences: Sequence[Experience]) -> None:
        path = self._path("experiences", name)

        def _do() -> None:
            with self._get_lock(str(path)):
                write_experiences(path, experiences)

        await asyncio.to_thread(_do)

    async def load_experiences(self, name: str) -> list[Experience]:
        path = self._path("experiences", name)

        def _do() -> list[Experience]:
            with self._get_lock(str(path)):
                if not path.exists():
                    raise FileNotFoundError(f"No experience buffer '{name}' at {path}")
                return read_experiences(path)

        return await asyncio.to_thread(_do)

    async def save_checkpoint(self, name: str, payload: dict[str, Any]) -> None:
        await asyncio.to_thread(self._write_text, self._path("models", name), dump_json(payload))

    async def load_checkpoint(self, name: str) -> dict[str, Any]:
        path = self._path("models", name)
        try:
            return await asyncio.to_thread(self._read_json, path)
        except FileNotFoundError as exc:
            raise CheckpointError(f"No model checkpoint '{name}' at {path}") from exc
        except ValueError as exc:
            raise CheckpointError(f"Unreadable model checkpoint '{name}': {exc}") from exc

    async def save_report(self, name: str, payload: dict[str, Any]) -> None:
        await asyncio.to_thread(self._write_text, self._path("reports", name), dump_json(payload))

    async def load_report(self, name: str) -> dict[str, Any]:
        return await asyncio.to_thread(self._read_json, self._path("reports", name))

    async def save_table(self, name: str, frame: pd.DataFrame) -> str:
        path = self._path("tables", name)
        await asyncio.to_thread(self._write_text, path, frame.to_csv(index=False))
        return str(path)
