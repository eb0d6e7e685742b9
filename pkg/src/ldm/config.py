"""Service configuration, loadable from a JSON file with nested or dotted keys."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from .errors import ValidationError

# dotted config key -> ServiceConfig attribute
KEYS = {
    "host": "host",
    "port": "port",
    "ttl.highly_dynamic_ms": "ttl_highly_dynamic_ms",
    "ttl.transient_dynamic_ms": "ttl_transient_dynamic_ms",
    "ttl.transient_static_ms": "ttl_transient_static_ms",
    "proximity.radius_m": "proximity_radius_m",
    "proximity.freshness_ms": "proximity_freshness_ms",
    "proximity.classes": "proximity_classes",
    "proximity.debounce_ms": "debounce_ms",
    "ingest.confidence_threshold": "confidence_threshold",
    "offline_timeout_ms": "offline_timeout_ms",
    "latency.budget_ms": "latency_budget_ms",
    "store.clock_skew_ms": "clock_skew_ms",
    "store.retention_ms": "retention_ms",
    "store.journal": "journal_path",
    "events.long_poll_s": "long_poll_s",
}


@dataclass(frozen=True)
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8080
    ttl_highly_dynamic_ms: int = 2_000
    ttl_transient_dynamic_ms: int = 300_000
    ttl_transient_static_ms: int = 86_400_000
    proximity_radius_m: float = 50.0
    proximity_freshness_ms: int | None = None  # defaults to the highly-dynamic TTL
    proximity_classes: tuple[str, ...] = ("car", "cyclist", "pedestrian")
    debounce_ms: int = 5_000
    confidence_threshold: float = 0.5
    offline_timeout_ms: int = 10_000
    latency_budget_ms: float = 100.0
    clock_skew_ms: int = 5_000
    retention_ms: int = 86_400_000
    journal_path: str | None = None
    long_poll_s: float = 25.0

    def __post_init__(self) -> None:
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if f.name in ("host", "journal_path", "proximity_classes") or value is None:
                continue
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ValidationError(f"config {f.name} must be a number, got {value!r}")
        if not isinstance(self.port, int):
            raise ValidationError(f"port must be an integer, got {self.port!r}")
        object.__setattr__(self, "proximity_classes", tuple(self.proximity_classes))

    def with_overrides(self, **changes: Any) -> "ServiceConfig":
        return dataclasses.replace(self, **{k: v for k, v in changes.items() if v is not None})


def _flatten(d: Mapping[str, Any], prefix: str = "") -> dict[str, Any]:
    out: dict[str, Any] = {}
    for key, value in d.items():
        full = f"{prefix}{key}"
        if isinstance(value, Mapping):
            out.update(_flatten(value, full + "."))
        else:
            out[full] = value
    return out


def config_from_mapping(d: Mapping[str, Any]) -> ServiceConfig:
    flat = _flatten(d)
    unknown = sorted(set(flat) - set(KEYS))
    if unknown:
        raise ValidationError(f"unknown config key(s): {', '.join(unknown)}")
    return ServiceConfig(**{KEYS[k]: v for k, v in flat.items()})


def load_config(path: str | Path) -> ServiceConfig:
    """Read a JSON config file. Raises FileNotFoundError or ValidationError."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(data, Mapping):
        raise ValidationError("config must be a JSON object")
    return config_from_mapping(data)
