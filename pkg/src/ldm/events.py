"""Geofence zones and the proximity / geofence-violation event engine."""

from __future__ import annotations

import enum
import itertools
import math
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .errors import ValidationError
from .geo import GeoPoint, Polygon, haversine_distance, point_in_polygon
from .store import DEFAULT_TTL_MS, LayerKind, ObjectStore

DEFAULT_RADIUS_M = 50.0
DEFAULT_DEBOUNCE_MS = 5_000
DEFAULT_PROXIMITY_CLASSES = frozenset({"cyclist", "pedestrian", "car"})


class ZoneKind(str, enum.Enum):
    NO_FLY = "no_fly"
    FIELD_BOUNDARY = "field_boundary"

    @classmethod
    def parse(cls, value: "str | ZoneKind") -> "ZoneKind":
        if isinstance(value, ZoneKind):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValidationError(f"unknown zone kind {value!r}") from None


class EventKind(str, enum.Enum):
    PROXIMITY_ALERT = "proximity_alert"
    GEOFENCE_VIOLATION = "geofence_violation"
    GEOFENCE_EXIT_VIOLATION = "geofence_exit_violation"


def _optional_number(value: object, name: str) -> float | None:
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ValidationError(f"{name} must be a finite number")
    return value


@dataclass(frozen=True)
class GeofenceZone:
    zone_id: str
    kind: ZoneKind
    polygon: Polygon
    alt_min: float | None = None
    alt_max: float | None = None
    bound_devices: frozenset[str] = frozenset()
    region_tag: str | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.zone_id, str) or not self.zone_id:
            raise ValidationError("zone_id must be a non-empty string")
        object.__setattr__(self, "kind", ZoneKind.parse(self.kind))
        if not isinstance(self.polygon, Polygon):
            raise ValidationError("polygon must be a Polygon")
        _optional_number(self.alt_min, "alt_min")
        _optional_number(self.alt_max, "alt_max")
        if self.alt_min is not None and self.alt_max is not None and not self.alt_min < self.alt_max:
            raise ValidationError("alt_min must be below alt_max")
        object.__setattr__(self, "bound_devices", frozenset(self.bound_devices))
        if self.kind is ZoneKind.NO_FLY and self.bound_devices:
            raise ValidationError("no-fly zones cannot bind devices")

    def within_band(self, pos: GeoPoint) -> bool:
        """Altitude check; a fix without altitude is treated as within every band."""
        if pos.alt is None:
            return True
        if self.alt_min is not None and pos.alt < self.alt_min:
            return False
        if self.alt_max is not None and pos.alt > self.alt_max:
            return False
        return True

    def violated_by(self, device_id: str, pos: GeoPoint) -> bool:
        if self.kind is ZoneKind.NO_FLY:
            return point_in_polygon(pos, self.polygon) and self.within_band(pos)
        if device_id not in self.bound_devices:
            return False
        return not (point_in_polygon(pos, self.polygon) and self.within_band(pos))


@dataclass(frozen=True)
class ProximityRule:
    radius_m: float = DEFAULT_RADIUS_M
    classes: frozenset[str] = DEFAULT_PROXIMITY_CLASSES
    freshness_ms: int = DEFAULT_TTL_MS[LayerKind.HIGHLY_DYNAMIC]  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if not self.radius_m > 0:
            raise ValidationError("proximity radius must be positive")
        if not self.freshness_ms > 0:
            raise ValidationError("proximity freshness must be positive")
        object.__setattr__(self, "classes", frozenset(self.classes))


@dataclass(frozen=True)
class Event:
    event_id: int
    kind: EventKind
    target_device: str
    subject: str
    at: int
    position: GeoPoint
    distance: float | None = None


@dataclass
class _FenceState:
    violating: bool = False
    last_emit: int | None = None


@dataclass
class _DeviceQueue:
    events: list[Event] = field(default_factory=list)


DeviceLookup = Callable[[str], "str | None"]


class EventEngine:
    """Evaluates each accepted location fix against stored objects and zones.

    ``region_of`` maps a device id to its region tag and raises UnknownDevice
    for unregistered ids. A device with no region tag sees every zone and
    object; a tagged device sees untagged items and those with its own tag.

    Debounce: a proximity alert for a (device, object) pair is suppressed while
    the previous one is younger than ``debounce_ms``. A geofence violation is
    emitted on entering the violating state, and again only every
    ``debounce_ms`` while the device stays in it.
    """

    def __init__(
        self,
        store: ObjectStore,
        region_of: DeviceLookup,
        *,
        rule: ProximityRule | None = None,
        debounce_ms: int = DEFAULT_DEBOUNCE_MS,
    ) -> None:
        if debounce_ms < 0:
            raise ValidationError("debounce window must be >= 0")
        self.store = store
        self.rule = rule or ProximityRule(freshness_ms=store.ttl(LayerKind.HIGHLY_DYNAMIC))
        self.debounce_ms = debounce_ms
        self._region_of = region_of
        self._zones: dict[str, GeofenceZone] = {}
        self._zone_lock = threading.Lock()
        self._ids = itertools.count(1)
        self._last_alert: dict[tuple[str, str], int] = {}
        self._fences: dict[tuple[str, str], _FenceState] = {}
        self._queues: dict[str, _DeviceQueue] = {}
        self._cond = threading.Condition()

    # zones

    def create_zone(self, zone: GeofenceZone) -> str:
        with self._zone_lock:
            if zone.zone_id in self._zones:
                raise ValidationError(f"zone {zone.zone_id!r} already exists")
            # copy-on-write so evaluations never see a torn zone set
            zones = dict(self._zones)
            zones[zone.zone_id] = zone
            self._zones = zones
        return zone.zone_id

    def zones(self) -> list[GeofenceZone]:
        return list(self._zones.values())

    # evaluation

    @staticmethod
    def _visible(tag: str | None, device_region: str | None) -> bool:
        return device_region is None or tag is None or tag == device_region

    def evaluate(self, device_id: str, pos: GeoPoint, at: int) -> list[Event]:
        region = self._region_of(device_id)
        pending: list[tuple[EventKind, str, float | None]] = []

        rule = self.rule
        snapshot = self.store.query_at(at, layers=[LayerKind.HIGHLY_DYNAMIC], max_age_ms=rule.freshness_ms)
        for obj in snapshot.objects:
            if obj.object_class not in rule.classes or obj.source_device == device_id:
                continue
            if not self._visible(obj.attributes.get("region_tag"), region):
                continue
            distance = haversine_distance(pos, obj.position)
            if distance > rule.radius_m:
                continue
            key = (device_id, obj.object_id)
            last = self._last_alert.get(key)
            if last is not None and at - last < self.debounce_ms:
                continue
            self._last_alert[key] = at
            pending.append((EventKind.PROXIMITY_ALERT, obj.object_id, distance))

        zones = self._zones
        for kind, event_kind in (
            (ZoneKind.NO_FLY, EventKind.GEOFENCE_VIOLATION),
            (ZoneKind.FIELD_BOUNDARY, EventKind.GEOFENCE_EXIT_VIOLATION),
        ):
            for zone in zones.values():
                if zone.kind is not kind or not self._visible(zone.region_tag, region):
                    continue
                state = self._fences.setdefault((device_id, zone.zone_id), _FenceState())
                violating = zone.violated_by(device_id, pos)
                emit = violating and (
                    not state.violating or state.last_emit is None or at - state.last_emit >= self.debounce_ms
                )
                state.violating = violating
                if emit:
                    state.last_emit = at
                    pending.append((event_kind, zone.zone_id, None))

        if not pending:
            return []
        with self._cond:
            events = [
                Event(next(self._ids), kind, device_id, subject, at, pos, distance)
                for kind, subject, distance in pending
            ]
            self._queues.setdefault(device_id, _DeviceQueue()).events.extend(events)
            self._cond.notify_all()
        return events

    def on_location(self, device_id: str, pos: GeoPoint, at: int) -> list[Event]:
        return self.evaluate(device_id, pos, at)

    # delivery

    def poll_events(self, device_id: str, after: int = 0, *, timeout_s: float = 0.0) -> list[Event]:
        """Queued events for ``device_id`` with id greater than ``after``.

        Nothing is consumed: polling again with the same cursor repeats the
        result. With ``timeout_s`` > 0, waits for new events when none are queued.
        """
        self._region_of(device_id)
        deadline = time.monotonic() + timeout_s
        with self._cond:
            while True:
                queue = self._queues.get(device_id)
                events = [] if queue is None else [e for e in queue.events if e.event_id > after]
                remaining = deadline - time.monotonic()
                if events or remaining <= 0:
                    return events
                self._cond.wait(remaining)

    def all_events(self) -> Iterable[Event]:
        with self._cond:
            return sorted((e for q in self._queues.values() for e in q.events), key=lambda e: e.event_id)


def region_lookup(tracker) -> DeviceLookup:
    """Adapt a DeviceTracker into the engine's region lookup."""
    return lambda device_id: tracker.get(device_id).region_tag
