"""Append-only NDJSON journal of store inserts, replayed on restart."""

from __future__ import annotations

import json
import logging
import os
import threading
from pathlib import Path
from typing import Iterable

from .errors import LdmError
from .store import MapObject
from .wire import dumps, object_from_wire, object_to_wire

log = logging.getLogger(__name__)


class Journal:
    """One MapObject per line, in commit order.

    A torn or corrupt line (for example a crash mid-write) is skipped with a
    warning on replay; every other line is restored.
    """

    def __init__(self, path: str | Path, *, fsync: bool = False) -> None:
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fsync = fsync
        self._lock = threading.Lock()
        self._fh = self.path.open("a", encoding="utf-8")

    def append(self, obj: MapObject) -> None:
        line = dumps(object_to_wire(obj)) + "\n"
        with self._lock:
            self._fh.write(line)
            if self._fsync:
                self._fh.flush()
                os.fsync(self._fh.fileno())

    def flush(self) -> None:
        with self._lock:
            if self._fh.closed:
                return
            self._fh.flush()
            os.fsync(self._fh.fileno())

    def rewrite(self, objs: Iterable[MapObject]) -> None:
        """Atomically replace the journal with exactly ``objs``."""
        tmp = self.path.with_suffix(self.path.suffix + ".tmp")
        with self._lock:
            with tmp.open("w", encoding="utf-8") as out:
                for obj in objs:
                    out.write(dumps(object_to_wire(obj)) + "\n")
                out.flush()
                os.fsync(out.fileno())
            self._fh.close()
            os.replace(tmp, self.path)
            self._fh = self.path.open("a", encoding="utf-8")

    def close(self) -> None:
        self.flush()
        with self._lock:
            self._fh.close()

    def replay(self) -> list[MapObject]:
        with self._lock:
            self._fh.flush()
        out: list[MapObject] = []
        with self.path.open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    out.append(object_from_wire(json.loads(line)))
                except (LdmError, TypeError, ValueError) as exc:
                    log.warning("journal %s:%d skipped: %s", self.path, lineno, exc)
        return out
