"""Pluggable experiment-tracking sinks.

The training engine logs per-epoch scalars and figure paths through this
interface. The default backend appends JSON lines to a metrics file inside
the experiment directory, which is safe for concurrent fold processes that
append whole lines. Remote tracking services can be plugged in by
registering another factory under a new name.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

from .errors import UnknownName


class Tracker:
    def log(self, fold: int, epoch: int, name: str, value: float) -> None:
        raise NotImplementedError

    def log_figure(self, fold: int, name: str, path) -> None:
        raise NotImplementedError

    def close(self) -> None:
        pass


class NullTracker(Tracker):
    def log(self, fold, epoch, name, value):
        pass

    def log_figure(self, fold, name, path):
        pass


class FileTracker(Tracker):
    """Line-delimited JSON records in ``<experiment dir>/metrics.log``."""

    def __init__(self, root):
        self.path = Path(root) / "metrics.log"
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def _append(self, record: dict) -> None:
        record["time"] = time.time()
        with open(self.path, "a") as fh:
            fh.write(json.dumps(record) + "\n")

    def log(self, fold, epoch, name, value):
        self._append({"kind": "scalar", "fold": fold, "epoch": epoch,
                      "name": name, "value": float(value)})

    def log_figure(self, fold, name, path):
        self._append({"kind": "figure", "fold": fold, "name": name, "path": str(path)})


_FACTORIES = {
    "file": FileTracker,
    "null": lambda root: NullTracker(),
    "none": lambda root: NullTracker(),
}


def register_tracker(name: str, factory) -> None:
    _FACTORIES[name] = factory


def make_tracker(name: str, root) -> Tracker:
    if name not in _FACTORIES:
        raise UnknownName("tracker", name, _FACTORIES)
    return _FACTORIES[name](root)
