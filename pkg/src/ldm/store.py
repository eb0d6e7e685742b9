"""Layered spatio-temporal object store with map-state-at-time queries."""

from __future__ import annotations

import bisect
import enum
import math
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Protocol

from .errors import FutureTimestamp, UnknownObject, ValidationError
from .geo import GeoPoint

HOUR_MS = 3_600_000


class LayerKind(str, enum.Enum):
    PERMANENT_STATIC = "permanent_static"
    TRANSIENT_STATIC = "transient_static"
    TRANSIENT_DYNAMIC = "transient_dynamic"
    HIGHLY_DYNAMIC = "highly_dynamic"

    @classmethod
    def parse(cls, value: "str | LayerKind") -> "LayerKind":
        if isinstance(value, LayerKind):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValidationError(f"unknown layer {value!r}") from None


# None means the state never expires.
DEFAULT_TTL_MS: dict[LayerKind, int | None] = {
    LayerKind.HIGHLY_DYNAMIC: 2_000,
    LayerKind.TRANSIENT_DYNAMIC: 5 * 60_000,
    LayerKind.TRANSIENT_STATIC: 24 * HOUR_MS,
    LayerKind.PERMANENT_STATIC: None,
}

# Ascending order of validity.
LAYER_ORDER = (
    LayerKind.HIGHLY_DYNAMIC,
    LayerKind.TRANSIENT_DYNAMIC,
    LayerKind.TRANSIENT_STATIC,
    LayerKind.PERMANENT_STATIC,
)

DEFAULT_RETENTION_MS = 24 * HOUR_MS
DEFAULT_CLOCK_SKEW_MS = 5_000


def check_timestamp(value: object, name: str = "timestamp") -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValidationError(f"{name} must be integer epoch milliseconds, got {value!r}")
    if value < 0:
        raise ValidationError(f"{name} must be >= 0, got {value}")
    return value


def validate_ttls(ttls: Mapping[LayerKind, int | None]) -> dict[LayerKind, int | None]:
    out = {layer: ttls.get(layer, DEFAULT_TTL_MS[layer]) for layer in LAYER_ORDER}
    if out[LayerKind.PERMANENT_STATIC] is not None:
        raise ValidationError("permanent_static TTL must be infinite")
    previous = 0
    for layer in LAYER_ORDER[:-1]:
        ttl = out[layer]
        if ttl is None or isinstance(ttl, bool) or not isinstance(ttl, int) or ttl <= previous:
            raise ValidationError("layer TTLs must be positive integers, strictly increasing toward static layers")
        previous = ttl
    return out


@dataclass(frozen=True)
class MapObject:
    object_id: str
    object_class: str
    position: GeoPoint
    timestamp: int
    layer: LayerKind
    source_device: str
    confidence: float = 1.0
    attributes: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not isinstance(self.object_id, str) or not self.object_id:
            raise ValidationError("object_id must be a non-empty string")
        if not isinstance(self.object_class, str) or not self.object_class:
            raise ValidationError("class must be a non-empty string")
        if not isinstance(self.position, GeoPoint):
            raise ValidationError("position must be a GeoPoint")
        check_timestamp(self.timestamp)
        object.__setattr__(self, "layer", LayerKind.parse(self.layer))
        if not isinstance(self.source_device, str):
            raise ValidationError("source_device must be a string")
        c = self.confidence
        if isinstance(c, bool) or not isinstance(c, (int, float)) or not math.isfinite(c) or not 0.0 <= c <= 1.0:
            raise ValidationError(f"confidence must be in [0, 1], got {c!r}")
        attrs = dict(self.attributes)
        if not all(isinstance(k, str) and isinstance(v, str) for k, v in attrs.items()):
            raise ValidationError("attributes must map strings to strings")
        object.__setattr__(self, "attributes", attrs)


@dataclass(frozen=True)
class BoundingBox:
    min_lat: float
    min_lon: float
    max_lat: float
    max_lon: float

    def __post_init__(self) -> None:
        if self.min_lat > self.max_lat or self.min_lon > self.max_lon:
            raise ValidationError("bounding box min must not exceed max")

    def contains(self, p: GeoPoint) -> bool:
        return self.min_lat <= p.lat <= self.max_lat and self.min_lon <= p.lon <= self.max_lon


@dataclass(frozen=True)
class MapSnapshot:
    at: int
    objects: tuple[MapObject, ...]


class JournalSink(Protocol):
    def append(self, obj: MapObject) -> None: ...

    def rewrite(self, objs: Iterable[MapObject]) -> None: ...

    def flush(self) -> None: ...


@dataclass
class _History:
    timestamps: list[int] = field(default_factory=list)
    states: list[MapObject] = field(default_factory=list)
    version: int = 0


def _wall_clock_ms() -> int:
    return int(time.time() * 1000)


class ObjectStore:
    """In-memory append-only history of object states, grouped per object_id.

    A state with the same (object_id, timestamp) as an existing one replaces it.
    All reads and writes take one lock, so every snapshot is a consistent cut.
    """

    def __init__(
        self,
        *,
        ttls: Mapping[LayerKind, int | None] | None = None,
        clock: Callable[[], int] = _wall_clock_ms,
        clock_skew_ms: int = DEFAULT_CLOCK_SKEW_MS,
        retention_ms: int = DEFAULT_RETENTION_MS,
        journal: JournalSink | None = None,
    ) -> None:
        self.ttls = validate_ttls(ttls or {})
        self._clock = clock
        self.clock_skew_ms = clock_skew_ms
        self.retention_ms = retention_ms
        self._journal = journal
        self._lock = threading.RLock()
        self._objects: dict[str, _History] = {}

    def attach_journal(self, journal: JournalSink) -> None:
        """Journal every subsequent insert (attach after restoring from it)."""
        self._journal = journal

    def ttl(self, layer: LayerKind) -> int | None:
        return self.ttls[layer]

    def _check_future(self, obj: MapObject) -> None:
        limit = self._clock() + self.clock_skew_ms
        if obj.timestamp > limit:
            raise FutureTimestamp(f"timestamp {obj.timestamp} is beyond server clock + {self.clock_skew_ms} ms")

    def _apply(self, obj: MapObject) -> int:
        hist = self._objects.setdefault(obj.object_id, _History())
        i = bisect.bisect_left(hist.timestamps, obj.timestamp)
        if i < len(hist.timestamps) and hist.timestamps[i] == obj.timestamp:
            hist.states[i] = obj
        else:
            hist.timestamps.insert(i, obj.timestamp)
            hist.states.insert(i, obj)
        hist.version += 1
        return hist.version

    def insert_object(self, obj: MapObject) -> int:
        """Append one state; returns its per-object version number."""
        return self.insert_many([obj])[0]

    def insert_many(self, objs: Iterable[MapObject]) -> list[int]:
        """Insert several states atomically: all are validated before any is applied."""
        objs = list(objs)
        for obj in objs:
            if not isinstance(obj, MapObject):
                raise ValidationError("expected MapObject")
            self._check_future(obj)
        with self._lock:
            versions = [self._apply(obj) for obj in objs]
            if self._journal is not None:
                for obj in objs:
                    self._journal.append(obj)
        return versions

    def restore(self, objs: Iterable[MapObject]) -> int:
        """Load states from a journal without the clock-skew check or re-journaling."""
        count = 0
        with self._lock:
            for obj in objs:
                self._apply(obj)
                count += 1
        return count

    def query_at(
        self,
        at: int,
        region: BoundingBox | None = None,
        layers: Iterable[LayerKind] | None = None,
        *,
        max_age_ms: int | None = None,
    ) -> MapSnapshot:
        """The map as it stood at ``at``.

        Per object, the latest state at or before ``at`` is returned when it is
        still within its layer's TTL (or ``max_age_ms``, if given, which
        tightens but never widens the TTL) and inside ``region``.
        """
        check_timestamp(at, "at")
        wanted = None if layers is None else {LayerKind.parse(layer) for layer in layers}
        found: list[MapObject] = []
        with self._lock:
            for object_id in sorted(self._objects):
                hist = self._objects[object_id]
                i = bisect.bisect_right(hist.timestamps, at)
                if i == 0:
                    continue
                state = hist.states[i - 1]
                if wanted is not None and state.layer not in wanted:
                    continue
                ttl = self.ttls[state.layer]
                if max_age_ms is not None:
                    ttl = max_age_ms if ttl is None else min(ttl, max_age_ms)
                if ttl is not None and state.timestamp < at - ttl:
                    continue
                if region is not None and not region.contains(state.position):
                    continue
                found.append(state)
        return MapSnapshot(at, tuple(found))

    def object_history(self, object_id: str, start: int = 0, end: int | None = None) -> list[MapObject]:
        if end is not None and start > end:
            raise ValidationError("history window start must not exceed end")
        with self._lock:
            hist = self._objects.get(object_id)
            if hist is None:
                raise UnknownObject(f"unknown object {object_id!r}")
            lo = bisect.bisect_left(hist.timestamps, start)
            hi = len(hist.timestamps) if end is None else bisect.bisect_right(hist.timestamps, end)
            return list(hist.states[lo:hi])

    def compact(self, now: int) -> int:
        """Drop states older than the retention horizon; returns the purge count.

        A state older than the horizon survives only if it is the last one at or
        before the horizon and could still be visible to a query at or after it:
        always for static layers, otherwise while its TTL reaches the horizon.
        """
        horizon = now - self.retention_ms
        purged = 0
        with self._lock:
            for object_id in list(self._objects):
                hist = self._objects[object_id]
                cut = bisect.bisect_left(hist.timestamps, horizon)
                if cut == 0:
                    continue
                boundary = hist.states[cut - 1]
                ttl = self.ttls[boundary.layer]
                keep_boundary = (
                    boundary.layer in (LayerKind.PERMANENT_STATIC, LayerKind.TRANSIENT_STATIC)
                    or ttl is None
                    or boundary.timestamp + ttl >= horizon
                )
                drop = cut - 1 if keep_boundary else cut
                if drop == 0:
                    continue
                del hist.timestamps[:drop]
                del hist.states[:drop]
                purged += drop
                if not hist.states:
                    del self._objects[object_id]
            if purged and self._journal is not None:
                self._journal.rewrite(self.all_states())
        return purged

    def all_states(self) -> list[MapObject]:
        with self._lock:
            return [s for oid in sorted(self._objects) for s in self._objects[oid].states]

    def __len__(self) -> int:
        with self._lock:
            return sum(len(h.states) for h in self._objects.values())

    def flush(self) -> None:
        if self._journal is not None:
            self._journal.flush()
