"""Run store abstraction layer.

Everything a workbench command persists (run logs and their manifests,
experience buffers, model checkpoints, reports, plot tables) goes through a
RunStore.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from typing import Any, Sequence

import numpy as np
import pandas as pd

from dhwlearn.agent import RunLog
from dhwlearn.dynamics.experience import Experience


class CheckpointError(FileNotFoundError):
    """A model checkpoint is missing or unreadable."""


def to_jsonable(value: Any) -> Any:
    """Plain JSON types; NaN and infinities become null."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        f = float(value)
        return f if math.isfinite(f) else None
    return value


class RunStore(ABC):
    """Abstract base class for workbench output stores.

    All methods are async. File-based stores wrap sync I/O
    in asyncio.to_thread() to keep a uniform interface.
    """

    @abstractmethod
    async def save_run_log(self, log: RunLog, manifest: dict[str, Any]) -> None:
        """Persist a run log with its manifest."""
        ...

    @abstractmethod
    async def load_run_log(self, run_id: str) -> RunLog:
        """Load a run log saved by save_run_log."""
        ...

    @abstractmethod
    async def list_runs(self) -> list[str]:
        """Run ids in sorted order."""
        ...

    @abstractmethod
    async def save_experiences(self, name: str, experiences: Sequence[Experience]) -> None:
        """Persist an agent's experience buffer."""
        ...

    @abstractmethod
    async def load_experiences(self, name: str) -> list[Experience]:
        """Raises FileNotFoundError when no buffer of that name exists."""
        ...

    @abstractmethod
    async def save_checkpoint(self, name: str, payload: dict[str, Any]) -> None:
        ...

    @abstractmethod
    async def load_checkpoint(self, name: str) -> dict[str, Any]:
        """Raises CheckpointError when missing or unreadable."""
        ...

    @abstractmethod
    async def save_report(self, name: str, payload: dict[str, Any]) -> None:
        ...

    @abstractmethod
    async def load_report(self, name: str) -> dict[str, Any]:
        ...

    @abstractmethod
    async def save_table(self, name: str, frame: pd.DataFrame) -> str:
        """Persist a tidy table; returns where it went."""
        ...

    async def close(self) -> None:
        """Release resources. Override if needed."""
        pass
