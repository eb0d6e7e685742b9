"""Live device position registry with Live/Offline status."""

from __future__ import annotations

import enum
import threading
from dataclasses import dataclass
from typing import Callable

from .auth import DeviceKind, Subscription
from .errors import StaleUpdate, UnknownDevice, ValidationError
from .geo import GeoPoint
from .store import LayerKind, MapObject, ObjectStore, check_timestamp

DEFAULT_OFFLINE_TIMEOUT_MS = 10_000

EGO_CLASS = {DeviceKind.VEHICLE: "ego-vehicle", DeviceKind.UAV: "ego-uav"}


class DeviceStatus(str, enum.Enum):
    LIVE = "live"
    OFFLINE = "offline"


@dataclass(frozen=True)
class Device:
    device_id: str
    kind: DeviceKind
    last_position: GeoPoint | None = None
    last_update: int | None = None
    status: DeviceStatus = DeviceStatus.OFFLINE
    region_tag: str | None = None


def device_status(now: int, last_update: int | None, offline_timeout_ms: int) -> DeviceStatus:
    if last_update is None or now - last_update > offline_timeout_ms:
        return DeviceStatus.OFFLINE
    return DeviceStatus.LIVE


def ego_object_id(device_id: str) -> str:
    return f"device:{device_id}"


@dataclass
class _Entry:
    kind: DeviceKind
    region_tag: str | None
    position: GeoPoint | None = None
    last_update: int | None = None
    lock: threading.Lock = None  # type: ignore[assignment]

    def __post_init__(self) -> None:
        self.lock = threading.Lock()


LocationListener = Callable[[str, GeoPoint, int], object]


class DeviceTracker:
    """Keeps each device's latest fix and mirrors the track into the store.

    Fixes must arrive in strictly increasing time order per device. Listeners
    (the event engine) run after the registry write, still under the device's
    lock, so evaluation order follows accepted updates.
    """

    def __init__(self, store: ObjectStore, *, offline_timeout_ms: int = DEFAULT_OFFLINE_TIMEOUT_MS) -> None:
        if offline_timeout_ms <= 0:
            raise ValidationError("offline_timeout_ms must be positive")
        self.store = store
        self.offline_timeout_ms = offline_timeout_ms
        self._lock = threading.Lock()
        self._devices: dict[str, _Entry] = {}
        self._listeners: list[LocationListener] = []

    def add_listener(self, callback: LocationListener) -> None:
        self._listeners.append(callback)

    def register(self, device_id: str, kind: DeviceKind, region_tag: str | None = None) -> None:
        with self._lock:
            self._devices.setdefault(device_id, _Entry(DeviceKind.parse(kind), region_tag))

    def on_subscribe(self, sub: Subscription) -> None:
        self.register(sub.device_id, sub.kind, sub.region_tag)

    def _entry(self, device_id: str) -> _Entry:
        entry = self._devices.get(device_id)
        if entry is None:
            raise UnknownDevice(f"unknown device {device_id!r}")
        return entry

    def update_location(self, device_id: str, pos: GeoPoint, at: int) -> None:
        check_timestamp(at, "at")
        entry = self._entry(device_id)
        with entry.lock:
            if entry.last_update is not None and at <= entry.last_update:
                raise StaleUpdate(f"fix at {at} is not newer than last update {entry.last_update}")
            attributes = {"region_tag": entry.region_tag} if entry.region_tag else {}
            self.store.insert_object(
                MapObject(
                    object_id=ego_object_id(device_id),
                    object_class=EGO_CLASS[entry.kind],
                    position=pos,
                    timestamp=at,
                    layer=LayerKind.HIGHLY_DYNAMIC,
                    source_device=device_id,
                    confidence=1.0,
                    attributes=attributes,
                )
            )
            entry.position = pos
            entry.last_update = at
            for listener in self._listeners:
                listener(device_id, pos, at)

    def get(self, device_id: str, now: int | None = None) -> Device:
        entry = self._entry(device_id)
        status = DeviceStatus.OFFLINE if now is None else device_status(now, entry.last_update, self.offline_timeout_ms)
        return Device(device_id, entry.kind, entry.position, entry.last_update, status, entry.region_tag)

    def last_position(self, device_id: str) -> GeoPoint | None:
        return self._entry(device_id).position

    def list_devices(self, now: int) -> list[Device]:
        with self._lock:
            ids = sorted(self._devices)
        return [self.get(device_id, now) for device_id in ids]
