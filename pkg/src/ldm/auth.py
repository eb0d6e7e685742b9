"""Device subscription and bearer-token verification."""

from __future__ import annotations

import enum
import secrets
import threading
import time
import uuid
from dataclasses import dataclass
from typing import Callable

from .errors import DuplicateDevice, InvalidToken, ValidationError


class DeviceKind(str, enum.Enum):
    VEHICLE = "vehicle"
    UAV = "uav"

    @classmethod
    def parse(cls, value: "str | DeviceKind") -> "DeviceKind":
        if isinstance(value, DeviceKind):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValidationError(f"unknown device kind {value!r}") from None


@dataclass(frozen=True)
class Token:
    value: str
    issued_at: int
    device_id: str


@dataclass(frozen=True)
class Subscription:
    device_id: str
    kind: DeviceKind
    created_at: int
    region_tag: str | None = None


def _new_token_value() -> str:
    # 32 random bytes -> 43 URL-safe characters
    return secrets.token_urlsafe(32)


def _wall_clock_ms() -> int:
    return int(time.time() * 1000)


class Authenticator:
    """Registry of subscriptions and their live tokens.

    One live token per device. Tokens never expire; ``revoke`` is the only way
    to invalidate one.
    """

    def __init__(self, clock: Callable[[], int] = _wall_clock_ms) -> None:
        self._clock = clock
        self._lock = threading.Lock()
        self._subscriptions: dict[str, Subscription] = {}
        self._tokens: dict[str, Token] = {}
        self._listeners: list[Callable[[Subscription], None]] = []

    def add_listener(self, callback: Callable[[Subscription], None]) -> None:
        """Call ``callback`` with every new subscription, inside the registry lock."""
        self._listeners.append(callback)

    def subscribe(
        self,
        kind: DeviceKind | str,
        requested_id: str | None = None,
        *,
        region_tag: str | None = None,
    ) -> tuple[str, Token]:
        kind = DeviceKind.parse(kind)
        if requested_id is not None and (not isinstance(requested_id, str) or not requested_id):
            raise ValidationError("device_id must be a non-empty string")
        with self._lock:
            if requested_id is None:
                device_id = f"{kind.value}-{uuid.uuid4().hex}"
                while device_id in self._subscriptions:
                    device_id = f"{kind.value}-{uuid.uuid4().hex}"
            else:
                if requested_id in self._subscriptions:
                    raise DuplicateDevice(f"device {requested_id!r} already subscribed")
                device_id = requested_id
            now = self._clock()
            value = _new_token_value()
            while value in self._tokens:
                value = _new_token_value()
            sub = Subscription(device_id, kind, now, region_tag)
            token = Token(value, now, device_id)
            self._subscriptions[device_id] = sub
            self._tokens[value] = token
            for listener in self._listeners:
                listener(sub)
        return device_id, token

    def verify(self, token_value: str | None) -> str:
        if not token_value:
            raise InvalidToken("missing token")
        token = self._tokens.get(token_value)
        if token is None:
            raise InvalidToken("unknown or revoked token")
        return token.device_id

    def revoke(self, token_value: str) -> None:
        with self._lock:
            if self._tokens.pop(token_value, None) is None:
                raise InvalidToken("unknown or revoked token")

    def subscription(self, device_id: str) -> Subscription | None:
        return self._subscriptions.get(device_id)

    def subscriptions(self) -> list[Subscription]:
        with self._lock:
            return list(self._subscriptions.values())
